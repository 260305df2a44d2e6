// SPDX-License-Identifier: Apache-2.0
//
// The learned prediction module: convolutional encoders over the observation
// history, a split latent code (deterministic shared part, stochastic
// unshared part with a conditional prior, and a fixed-variance motion code
// over frame differences), and a deconvolutional decoder. The base variant
// predicts the aligned environment frame directly; the difference-learning
// variant predicts the frame difference and composes it with the anticipated
// frame.
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "gridcast/autodiff.hpp"
#include "gridcast/kinematics.hpp"
#include "gridcast/losses.hpp"
#include "gridcast/ogm.hpp"
#include "gridcast/record.hpp"
#include "gridcast/rng.hpp"
#include "gridcast/run_config.hpp"

namespace gridcast {

struct PredictorConfig {
  Variant variant = Variant::kBase;
  int grid_h = 64, grid_w = 64;
  int channels = 2;
  int latent_dim = 32;
  int base_channels = 8;
  int input_frames = 10;  // t
  double eta_percent = 10.0;
  double epsilon_motion = 0.5;
  double lambda_ssim = 0.05;
  ReconKind recon = ReconKind::kMse;
  bool no_rbm = false, no_bcde = false, no_me = false;
  Interp warp_interp = Interp::kBilinear;
  double ego_len_px = 9.0, ego_wid_px = 4.0;
};

PredictorConfig predictor_config_from_run(const RunConfig& run, const SequenceRecord& sample);
std::string predictor_config_string(const PredictorConfig& cfg);
PredictorConfig parse_predictor_config(const std::string& text);

// Per-dataset geometry the step graph needs besides the model parameters.
struct GeomSpec {
  int h = 64, w = 64, c = 2;
  double meters_per_pixel = 0.25;
  double dt = 0.1;
  double anchor_row = 32.0, anchor_col = 32.0;
  bool binary = false;
  std::vector<ChannelRole> roles;
};

GeomSpec geom_from_record(const SequenceRecord& rec);

// Derived convolutional topology: stride-2 levels halve the grid down to a
// 4x4 seed; the decoder mirrors with transposed convolutions and crops.
struct Topology {
  int levels = 3;
  std::vector<int> enc_channels;
  int seed_hw = 8;      // decoder seed resolution (4 on the smallest grids)
  int trunk_dim = 64;   // frames/prior/posterior trunk width
  int ego_dim = 32;
  int meas_dim = 16;
  int shared_dim = 112;
  int code_dim = 176;   // shared + latent + latent
  int dec_fc1 = 128;
};

Topology derive_topology(const PredictorConfig& cfg);

template <typename T>
struct ParamTensor {
  std::string name;
  ad::Shape shape;
  std::vector<T> value;
  bool zero_init = false;
};

enum class LatentMode { kTrainAuto, kForcePrior, kForcePosterior, kSamplePrior, kPriorMean };

template <typename T>
class PredictorModel;

// Model parameters inserted into one tape; all graph building goes through
// this handle so a single forward pass shares every parameter node.
template <typename T>
struct BoundModel {
  const PredictorModel<T>* model = nullptr;
  ad::Tape<T>* tape = nullptr;
  std::vector<ad::Var<T>> p;

  ad::Var<T> at(const std::string& name) const;

  ad::Var<T> conv_trunk(const std::string& prefix, ad::Var<T> image, int out_dim, bool linear_head) const;
  ad::Var<T> encode_shared(ad::Var<T> frames_stack, ad::Var<T> meas_features, ad::Var<T> j_ego) const;
  GaussianCodeVar<T> encode_prior(ad::Var<T> frames_stack, ad::Var<T> j_ego) const;
  GaussianCodeVar<T> encode_posterior(ad::Var<T> frames_stack, ad::Var<T> j_ego, ad::Var<T> j_env) const;
  GaussianCodeVar<T> encode_motion(ad::Var<T> diff_stack) const;
  ad::Var<T> decode(ad::Var<T> code) const;
  GaussianCodeVar<T> standard_normal_code() const;
};

template <typename T>
class PredictorModel {
 public:
  explicit PredictorModel(PredictorConfig cfg);

  const PredictorConfig& config() const { return cfg_; }
  const Topology& topology() const { return topo_; }

  void init_params(Rng& rng);
  std::vector<ParamTensor<T>>& params() { return params_; }
  const std::vector<ParamTensor<T>>& params() const { return params_; }
  int param_index(const std::string& name) const;
  long long param_count() const;

  // Parameter names shared by the conditional-prior path and the posterior
  // path (single storage by construction).
  std::vector<std::string> shared_param_names() const;

  BoundModel<T> bind(ad::Tape<T>& tape) const;

 private:
  void add_param(const std::string& name, ad::Shape shape, bool zero_init);
  void register_conv_trunk(const std::string& prefix, int in_channels, int out_dim);

  PredictorConfig cfg_;
  Topology topo_;
  std::vector<ParamTensor<T>> params_;
  std::map<std::string, int> index_;
};

// Reparameterized draw: mean + sqrt(var) * n with n ~ N(0, I) from `rng`.
template <typename T>
ad::Var<T> sample_gaussian(const GaussianCodeVar<T>& code, Rng& rng) {
  using namespace ad;
  const int d = static_cast<int>(numel(code.mean.shape()));
  std::vector<T> noise(static_cast<std::size_t>(d));
  for (auto& n : noise) n = static_cast<T>(rng.normal());
  Var<T> eps = constant(*code.mean.tape, {d}, std::move(noise));
  return add(code.mean, mul(sqrt_(code.var), eps));
}

// The eta-switch: in training mode the unshared code is drawn from the
// conditional prior eta% of the time so reconstruction errors also train the
// prior encoder; otherwise from the posterior. `drew_prior` reports the
// branch taken.
template <typename T>
ad::Var<T> sample_latent(const GaussianCodeVar<T>& prior, const GaussianCodeVar<T>* posterior, LatentMode mode,
                         double eta_percent, Rng& rng, bool* drew_prior = nullptr) {
  bool use_prior = true;
  switch (mode) {
    case LatentMode::kTrainAuto:
      if (posterior == nullptr) throw std::invalid_argument("sample_latent: training mode requires a posterior code");
      use_prior = rng.uniform() * 100.0 < eta_percent;
      break;
    case LatentMode::kForcePrior:
      use_prior = true;
      break;
    case LatentMode::kForcePosterior:
      if (posterior == nullptr) throw std::invalid_argument("sample_latent: posterior requested but absent");
      use_prior = false;
      break;
    case LatentMode::kSamplePrior:
      use_prior = true;
      break;
    case LatentMode::kPriorMean:
      if (drew_prior) *drew_prior = true;
      return prior.mean;
  }
  if (drew_prior) *drew_prior = use_prior;
  return sample_gaussian(use_prior ? prior : *posterior, rng);
}

// Adds the predicted difference to the anticipated frame. The raw sum may
// leave [0,1]; the clipped frame is what feeds the output transform and the
// next step.
template <typename T>
std::pair<ad::Var<T>, ad::Var<T>> dl_compose(ad::Var<T> j_ego, ad::Var<T> j_diff_hat) {
  using namespace ad;
  if (j_ego.shape() != j_diff_hat.shape()) shape_error("dl_compose", j_ego.shape(), j_diff_hat.shape());
  Var<T> raw = add(j_ego, j_diff_hat);
  return {raw, clamp(raw, T(0), T(1))};
}

// ---- step graph ---------------------------------------------------------------

// Sliding observation window on the tape. Fed-back predictions replace the
// oldest frame, so gradients flow through the whole unrolled horizon.
template <typename T>
struct TapeWindow {
  std::vector<ad::Var<T>> frames;   // t ego-centered frames [C,H,W]
  std::vector<ad::Var<T>> diffs;    // t-1 aligned difference frames
  std::vector<Measurements> meas;   // t
  std::vector<double> headings;     // t
};

enum class StepPurpose { kTrain, kEvalSample, kEvalMean };

template <typename T>
struct StepOutput {
  ad::Var<T> pred_raw;      // scored by the reconstruction term
  ad::Var<T> pred_clipped;  // fed to the output transform / next step
  ad::Var<T> fed_back;      // ego-centered next frame
  GaussianCodeVar<T> prior;
  GaussianCodeVar<T> posterior;
  bool has_posterior = false;
  bool drew_prior = false;
  Measurements next_meas;
  double next_heading = 0.0;
  PoseDelta delta;
  WarpSpec warp;
  LossBreakdown loss_values;
  ad::Var<T> loss_total;
  bool has_loss = false;
};

// Stubs replace the learned decoder inside the otherwise unchanged step:
// persistence predicts the anticipated frame itself (nothing else moves);
// the oracle substitutes the aligned true next frame.
enum class DecoderStub { kNone, kPersistence, kOracle };

struct StepControls {
  StepPurpose purpose = StepPurpose::kEvalMean;
  LatentMode latent_mode = LatentMode::kPriorMean;
  double lambda = 0.05;
  ReconKind recon = ReconKind::kMse;
  DecoderStub stub = DecoderStub::kNone;
};

namespace pdetail {

template <typename T>
ad::Var<T> frame_constant(ad::Tape<T>& tape, const Ogm& f) {
  std::vector<T> data(f.grid.data.begin(), f.grid.data.end());
  return ad::constant(tape, {f.c(), f.h(), f.w()}, std::move(data));
}

template <typename T>
ad::Var<T> grid_constant(ad::Tape<T>& tape, const Grid& g) {
  std::vector<T> data(g.data.begin(), g.data.end());
  return ad::constant(tape, {g.c, g.h, g.w}, std::move(data));
}

inline double heading_of(const Measurements& m, double prev) {
  const double s = std::hypot(m.v.x, m.v.y);
  return s > 0.0 ? std::atan2(m.v.y, m.v.x) : prev;
}

inline WarpSpec warp_spec_for(const PoseDelta& d, double heading_before, const GeomSpec& geom) {
  const double c = std::cos(-heading_before), s = std::sin(-heading_before);
  WarpSpec spec;
  spec.dtheta = d.dtheta;
  spec.dp_row = -(c * d.dp.x - s * d.dp.y) / geom.meters_per_pixel;
  spec.dp_col = -(s * d.dp.x + c * d.dp.y) / geom.meters_per_pixel;
  spec.pivot_row = geom.anchor_row;
  spec.pivot_col = geom.anchor_col;
  return spec;
}

}  // namespace pdetail

std::vector<bool> ego_mask_for(const GeomSpec& geom);
Grid canonical_ego_channel(const GeomSpec& geom, double ego_len_px, double ego_wid_px);

// Measurement features: positions relative to the newest frame (scaled by
// the view extent), velocities scaled by a nominal speed, plus the raw
// action when the rule-based modules are disabled.
template <typename T>
std::vector<T> measurement_features(const std::vector<Measurements>& meas, const GeomSpec& geom, bool no_rbm,
                                    const ActionCmd* action) {
  const double span = geom.h * geom.meters_per_pixel;
  const double vs = 20.0;
  std::vector<T> out;
  out.reserve(meas.size() * 4 + (no_rbm ? 2 : 0));
  const Vec2 ref = meas.back().p;
  for (const auto& m : meas) {
    out.push_back(static_cast<T>((m.p.x - ref.x) / span));
    out.push_back(static_cast<T>((m.p.y - ref.y) / span));
    out.push_back(static_cast<T>(m.v.x / vs));
    out.push_back(static_cast<T>(m.v.y / vs));
  }
  if (no_rbm) {
    if (action == nullptr) throw std::invalid_argument("measurement_features: no_rbm needs the action");
    out.push_back(static_cast<T>(action->alpha / 10.0));
    out.push_back(static_cast<T>(action->tau));
  }
  return out;
}

// Builds the initial tape window from plain observations. `past_actions`
// aligns the difference frames: diffs[i] compares frame i+1 (aligned to the
// anticipated pose of step i) with frame i moved to that pose.
template <typename T>
TapeWindow<T> make_tape_window(ad::Tape<T>& tape, const PredictorConfig& cfg, const GeomSpec& geom,
                               const std::vector<Ogm>& frames, const std::vector<Measurements>& meas,
                               const std::vector<ActionCmd>& past_actions) {
  using namespace ad;
  if (static_cast<int>(frames.size()) != cfg.input_frames)
    throw std::invalid_argument("window frame count " + std::to_string(frames.size()) + " does not match configured " +
                                std::to_string(cfg.input_frames));
  if (frames.size() != meas.size() || (frames.size() >= 1 && past_actions.size() + 1 != frames.size()))
    throw std::invalid_argument("window measurements/actions are inconsistent with the frame count");
  TapeWindow<T> w;
  w.meas = meas;
  w.headings.resize(meas.size());
  double prev = 0.0;
  for (std::size_t i = 0; i < meas.size(); ++i) {
    prev = pdetail::heading_of(meas[i], prev);
    w.headings[i] = prev;
  }
  for (const auto& f : frames) w.frames.push_back(pdetail::frame_constant(tape, f));
  const std::vector<bool> ego_sel = ego_mask_for(geom);
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    Var<T> prev_f = w.frames[i];
    Var<T> next_f = w.frames[i + 1];
    if (cfg.no_rbm) {
      w.diffs.push_back(sub(next_f, prev_f));
      continue;
    }
    const auto step = measurement_step(meas[i], past_actions[i], geom.dt, w.headings[i]);
    const WarpSpec spec = pdetail::warp_spec_for(step.delta, step.heading_before, geom);
    Var<T> j_ego = warp2d(prev_f, spec, ego_sel, cfg.warp_interp, false);
    Var<T> j_env = warp2d(next_f, spec, {}, cfg.warp_interp, false);
    w.diffs.push_back(sub(j_env, j_ego));
  }
  return w;
}

// One prediction step: anticipate the ego, encode, sample, decode, compose,
// and re-center. In training a target frame must be supplied; the aligned
// teacher target always comes from the true next frame.
template <typename T>
StepOutput<T> predict_step(const BoundModel<T>& bm, TapeWindow<T>& window, const ActionCmd& action,
                           const GeomSpec& geom, const StepControls& controls, Rng& rng, const Ogm* true_next) {
  using namespace ad;
  const PredictorConfig& cfg = bm.model->config();
  Tape<T>& tape = *bm.tape;
  if (static_cast<int>(window.frames.size()) != cfg.input_frames)
    throw std::invalid_argument("predict_step: window does not match configured input_frames");
  if (controls.purpose == StepPurpose::kTrain && true_next == nullptr)
    throw std::invalid_argument("predict_step: training requires the target frame");

  StepOutput<T> out;
  const Measurements cur = window.meas.back();
  const double heading = window.headings.back();
  const auto step = measurement_step(cur, action, geom.dt, heading);
  out.next_meas = step.next;
  out.next_heading = step.heading_after;
  out.delta = step.delta;
  out.warp = pdetail::warp_spec_for(step.delta, step.heading_before, geom);

  const std::vector<bool> ego_sel = ego_mask_for(geom);
  Var<T> last = window.frames.back();
  Var<T> j_ego = cfg.no_rbm ? last : warp2d(last, out.warp, ego_sel, cfg.warp_interp, false);

  Var<T> frames_stack = concat(window.frames);
  Var<T> meas_vec = constant(
      tape, {static_cast<int>(window.meas.size()) * 4 + (cfg.no_rbm ? 2 : 0)},
      measurement_features<T>(window.meas, geom, cfg.no_rbm, &action));
  Var<T> shared = bm.encode_shared(frames_stack, meas_vec, j_ego);

  out.prior = cfg.no_bcde ? bm.standard_normal_code() : bm.encode_prior(frames_stack, j_ego);

  Var<T> target{};
  const GaussianCodeVar<T>* posterior_ptr = nullptr;
  if (controls.purpose == StepPurpose::kTrain) {
    Ogm aligned = cfg.no_rbm ? *true_next : iot2(*true_next, out.warp, cfg.warp_interp);
    target = pdetail::frame_constant(tape, aligned);
    out.posterior = bm.encode_posterior(frames_stack, j_ego, target);
    out.has_posterior = true;
    posterior_ptr = &out.posterior;
  }

  Var<T> z = sample_latent(out.prior, posterior_ptr, controls.latent_mode, cfg.eta_percent, rng, &out.drew_prior);

  Var<T> motion{};
  if (cfg.no_me) {
    motion = constant(tape, {cfg.latent_dim}, std::vector<T>(static_cast<std::size_t>(cfg.latent_dim), T(0)));
  } else {
    Var<T> diff_stack = concat(window.diffs);
    GaussianCodeVar<T> mcode = bm.encode_motion(diff_stack);
    motion = controls.purpose == StepPurpose::kEvalMean ? mcode.mean : sample_gaussian(mcode, rng);
  }

  Var<T> code = concat<T>({shared, z, motion});
  if (controls.stub == DecoderStub::kPersistence) {
    out.pred_raw = j_ego;
    out.pred_clipped = j_ego;
  } else if (controls.stub == DecoderStub::kOracle) {
    if (true_next == nullptr) throw std::invalid_argument("predict_step: oracle stub needs the true next frame");
    Ogm aligned = cfg.no_rbm ? *true_next : iot2(*true_next, out.warp, cfg.warp_interp);
    Var<T> oracle = pdetail::frame_constant(tape, aligned);
    out.pred_raw = oracle;
    out.pred_clipped = oracle;
  } else if (cfg.variant == Variant::kDl) {
    Var<T> decoded = bm.decode(code);
    auto composed = dl_compose(j_ego, decoded);
    out.pred_raw = composed.first;
    out.pred_clipped = composed.second;
  } else {
    Var<T> decoded = bm.decode(code);
    out.pred_raw = decoded;
    out.pred_clipped = decoded;
  }

  if (controls.purpose == StepPurpose::kTrain) {
    auto loss = step_loss(target, out.pred_raw, out.posterior, out.prior, controls.lambda, controls.recon,
                          cfg.variant == Variant::kDl);
    out.loss_total = loss.total;
    out.loss_values = loss.values;
    out.has_loss = true;
  }

  // close the loop: re-center on the ego and restore the canonical ego stamp
  Var<T> next_frame{};
  if (cfg.no_rbm) {
    next_frame = out.pred_clipped;
  } else {
    Var<T> recentered = warp2d(out.pred_clipped, out.warp, {}, cfg.warp_interp, true);
    int ego_ch = -1;
    for (std::size_t i = 0; i < geom.roles.size(); ++i)
      if (geom.roles[i] == ChannelRole::kEgo) ego_ch = static_cast<int>(i);
    Grid stamp = canonical_ego_channel(geom, cfg.ego_len_px, cfg.ego_wid_px);
    Var<T> stamp_v = pdetail::grid_constant(tape, stamp);
    std::vector<Var<T>> parts;
    if (ego_ch > 0) parts.push_back(slice_channels(recentered, 0, ego_ch));
    parts.push_back(stamp_v);
    if (ego_ch + 1 < geom.c) parts.push_back(slice_channels(recentered, ego_ch + 1, geom.c - ego_ch - 1));
    next_frame = concat(parts);
  }
  out.fed_back = next_frame;

  // slide the window
  if (!cfg.no_rbm) {
    Var<T> j_ego_hist = warp2d(window.frames.back(), out.warp, ego_sel, cfg.warp_interp, false);
    Var<T> j_env_hist = warp2d(next_frame, out.warp, {}, cfg.warp_interp, false);
    window.diffs.push_back(sub(j_env_hist, j_ego_hist));
  } else {
    window.diffs.push_back(sub(next_frame, window.frames.back()));
  }
  if (!window.diffs.empty()) window.diffs.erase(window.diffs.begin());
  window.frames.push_back(next_frame);
  window.frames.erase(window.frames.begin());
  window.meas.push_back(out.next_meas);
  window.meas.erase(window.meas.begin());
  window.headings.push_back(out.next_heading);
  window.headings.erase(window.headings.begin());
  return out;
}

// ---- template implementation ---------------------------------------------------

template <typename T>
PredictorModel<T>::PredictorModel(PredictorConfig cfg) : cfg_(cfg), topo_(derive_topology(cfg)) {
  const int t = cfg_.input_frames;
  const int C = cfg_.channels;
  const int meas_in = 4 * t + (cfg_.no_rbm ? 2 : 0);

  add_param("meas.fc1.w", {2 * topo_.meas_dim, meas_in}, false);
  add_param("meas.fc1.b", {2 * topo_.meas_dim}, false);
  add_param("meas.fc2.w", {topo_.meas_dim, 2 * topo_.meas_dim}, false);
  add_param("meas.fc2.b", {topo_.meas_dim}, false);

  register_conv_trunk("frames_enc", t * C, topo_.trunk_dim);
  register_conv_trunk("ego_enc", C, topo_.ego_dim);
  if (!cfg_.no_me) register_conv_trunk("motion_enc", (t - 1) * C, cfg_.latent_dim);
  if (!cfg_.no_bcde) {
    register_conv_trunk("prior_enc", (t + 1) * C, topo_.trunk_dim);
    add_param("prior_enc.mu.w", {cfg_.latent_dim, topo_.trunk_dim}, true);
    add_param("prior_enc.mu.b", {cfg_.latent_dim}, true);
    add_param("prior_enc.logvar.w", {cfg_.latent_dim, topo_.trunk_dim}, true);
    add_param("prior_enc.logvar.b", {cfg_.latent_dim}, true);
  }
  register_conv_trunk("post_enc", (t + 2) * C, topo_.trunk_dim);
  add_param("post_enc.hidden.w", {topo_.trunk_dim, topo_.trunk_dim}, false);
  add_param("post_enc.hidden.b", {topo_.trunk_dim}, false);
  add_param("post_enc.mu.w", {cfg_.latent_dim, topo_.trunk_dim}, true);
  add_param("post_enc.mu.b", {cfg_.latent_dim}, true);
  add_param("post_enc.logvar.w", {cfg_.latent_dim, topo_.trunk_dim}, true);
  add_param("post_enc.logvar.b", {cfg_.latent_dim}, true);

  const int top_ch = topo_.enc_channels.back();
  add_param("dec.fc1.w", {topo_.dec_fc1, topo_.code_dim}, false);
  add_param("dec.fc1.b", {topo_.dec_fc1}, false);
  add_param("dec.fc2.w", {top_ch * topo_.seed_hw * topo_.seed_hw, topo_.dec_fc1}, false);
  add_param("dec.fc2.b", {top_ch * topo_.seed_hw * topo_.seed_hw}, false);
  for (int l = topo_.levels - 1; l >= 0; --l) {
    const int in_ch = topo_.enc_channels[static_cast<std::size_t>(l)];
    const int out_ch = l > 0 ? topo_.enc_channels[static_cast<std::size_t>(l - 1)] : C;
    add_param("dec.deconv" + std::to_string(topo_.levels - 1 - l) + ".w", {in_ch, out_ch, 4, 4}, false);
    add_param("dec.deconv" + std::to_string(topo_.levels - 1 - l) + ".b", {out_ch}, false);
  }
}

template <typename T>
void PredictorModel<T>::add_param(const std::string& name, ad::Shape shape, bool zero_init) {
  ParamTensor<T> p;
  p.name = name;
  p.shape = std::move(shape);
  p.value.assign(static_cast<std::size_t>(ad::numel(p.shape)), T(0));
  p.zero_init = zero_init;
  index_[name] = static_cast<int>(params_.size());
  params_.push_back(std::move(p));
}

template <typename T>
void PredictorModel<T>::register_conv_trunk(const std::string& prefix, int in_channels, int out_dim) {
  int in_ch = in_channels;
  for (int l = 0; l < topo_.levels; ++l) {
    const int out_ch = topo_.enc_channels[static_cast<std::size_t>(l)];
    add_param(prefix + ".conv" + std::to_string(l) + ".w", {out_ch, in_ch, 4, 4}, false);
    add_param(prefix + ".conv" + std::to_string(l) + ".b", {out_ch}, false);
    in_ch = out_ch;
  }
  const int flat = topo_.enc_channels.back() * topo_.seed_hw * topo_.seed_hw;
  const bool zero = prefix == "motion_enc";  // the motion mean head starts at zero
  add_param(prefix + ".fc.w", {out_dim, flat}, zero);
  add_param(prefix + ".fc.b", {out_dim}, zero);
}

template <typename T>
void PredictorModel<T>::init_params(Rng& rng) {
  for (auto& p : params_) {
    if (p.zero_init) {
      std::fill(p.value.begin(), p.value.end(), T(0));
      continue;
    }
    long long fan_in = 1;
    if (p.shape.size() == 2) fan_in = p.shape[1];
    else if (p.shape.size() == 4) fan_in = static_cast<long long>(p.shape[1]) * p.shape[2] * p.shape[3];
    else {
      std::fill(p.value.begin(), p.value.end(), T(0));  // biases
      continue;
    }
    const double s = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (auto& v : p.value) v = static_cast<T>(rng.uniform(-s, s));
  }
}

template <typename T>
int PredictorModel<T>::param_index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

template <typename T>
long long PredictorModel<T>::param_count() const {
  long long n = 0;
  for (const auto& p : params_) n += static_cast<long long>(p.value.size());
  return n;
}

template <typename T>
std::vector<std::string> PredictorModel<T>::shared_param_names() const {
  std::vector<std::string> out;
  for (const auto& p : params_) {
    if (p.name.rfind("meas.", 0) == 0 || p.name.rfind("frames_enc.", 0) == 0 || p.name.rfind("ego_enc.", 0) == 0 ||
        p.name.rfind("motion_enc.", 0) == 0)
      out.push_back(p.name);
  }
  return out;
}

template <typename T>
BoundModel<T> PredictorModel<T>::bind(ad::Tape<T>& tape) const {
  BoundModel<T> bm;
  bm.model = this;
  bm.tape = &tape;
  bm.p.reserve(params_.size());
  for (const auto& pt : params_) bm.p.push_back(ad::param(tape, pt.shape, pt.value));
  return bm;
}

template <typename T>
ad::Var<T> BoundModel<T>::at(const std::string& name) const {
  return p[static_cast<std::size_t>(model->param_index(name))];
}

template <typename T>
ad::Var<T> BoundModel<T>::conv_trunk(const std::string& prefix, ad::Var<T> image, int out_dim, bool linear_head) const {
  using namespace ad;
  const Topology& topo = model->topology();
  Var<T> x = image;
  for (int l = 0; l < topo.levels; ++l) {
    x = pad2d(x, 1);
    x = conv2d(x, at(prefix + ".conv" + std::to_string(l) + ".w"), at(prefix + ".conv" + std::to_string(l) + ".b"), 2);
    x = l + 1 < topo.levels ? leaky_relu(x, T(0.2)) : relu(x);
  }
  x = reshape(x, {topo.enc_channels.back() * topo.seed_hw * topo.seed_hw});
  Var<T> y = linear(x, at(prefix + ".fc.w"), at(prefix + ".fc.b"));
  (void)out_dim;
  return linear_head ? y : relu(y);
}

template <typename T>
ad::Var<T> BoundModel<T>::encode_shared(ad::Var<T> frames_stack, ad::Var<T> meas_features, ad::Var<T> j_ego) const {
  using namespace ad;
  const Topology& topo = model->topology();
  Var<T> f = conv_trunk("frames_enc", frames_stack, topo.trunk_dim, false);
  Var<T> m = leaky_relu(linear(meas_features, at("meas.fc1.w"), at("meas.fc1.b")), T(0.2));
  m = relu(linear(m, at("meas.fc2.w"), at("meas.fc2.b")));
  Var<T> e = conv_trunk("ego_enc", j_ego, topo.ego_dim, false);
  return concat<T>({f, m, e});
}

template <typename T>
GaussianCodeVar<T> BoundModel<T>::encode_prior(ad::Var<T> frames_stack, ad::Var<T> j_ego) const {
  using namespace ad;
  Var<T> trunk = conv_trunk("prior_enc", concat<T>({frames_stack, j_ego}), model->topology().trunk_dim, true);
  Var<T> mu = linear(trunk, at("prior_enc.mu.w"), at("prior_enc.mu.b"));
  Var<T> logvar = linear(trunk, at("prior_enc.logvar.w"), at("prior_enc.logvar.b"));
  return {mu, exp_(logvar)};
}

template <typename T>
GaussianCodeVar<T> BoundModel<T>::encode_posterior(ad::Var<T> frames_stack, ad::Var<T> j_ego, ad::Var<T> j_env) const {
  using namespace ad;
  Var<T> trunk = conv_trunk("post_enc", concat<T>({frames_stack, j_ego, j_env}), model->topology().trunk_dim, true);
  Var<T> h = leaky_relu(linear(trunk, at("post_enc.hidden.w"), at("post_enc.hidden.b")), T(0.2));
  Var<T> mu = linear(h, at("post_enc.mu.w"), at("post_enc.mu.b"));
  Var<T> logvar = linear(h, at("post_enc.logvar.w"), at("post_enc.logvar.b"));
  return {mu, exp_(logvar)};
}

template <typename T>
GaussianCodeVar<T> BoundModel<T>::encode_motion(ad::Var<T> diff_stack) const {
  using namespace ad;
  const PredictorConfig& cfg = model->config();
  if (cfg.no_me) throw std::invalid_argument("encode_motion called with the motion branch disabled");
  Var<T> mu = conv_trunk("motion_enc", diff_stack, cfg.latent_dim, true);
  Var<T> var = constant(*tape, {cfg.latent_dim},
                        std::vector<T>(static_cast<std::size_t>(cfg.latent_dim), static_cast<T>(cfg.epsilon_motion)));
  return {mu, var};
}

template <typename T>
GaussianCodeVar<T> BoundModel<T>::standard_normal_code() const {
  using namespace ad;
  const int d = model->config().latent_dim;
  Var<T> mu = constant(*tape, {d}, std::vector<T>(static_cast<std::size_t>(d), T(0)));
  Var<T> var = constant(*tape, {d}, std::vector<T>(static_cast<std::size_t>(d), T(1)));
  return {mu, var};
}

template <typename T>
ad::Var<T> BoundModel<T>::decode(ad::Var<T> code) const {
  using namespace ad;
  const Topology& topo = model->topology();
  const PredictorConfig& cfg = model->config();
  Var<T> x = leaky_relu(linear(code, at("dec.fc1.w"), at("dec.fc1.b")), T(0.2));
  x = leaky_relu(linear(x, at("dec.fc2.w"), at("dec.fc2.b")), T(0.2));
  Var<T> img = reshape(x, {topo.enc_channels.back(), topo.seed_hw, topo.seed_hw});
  for (int l = 0; l < topo.levels; ++l) {
    img = deconv2d(img, at("dec.deconv" + std::to_string(l) + ".w"), at("dec.deconv" + std::to_string(l) + ".b"), 2);
    img = crop2d(img, 1);
    if (l + 1 < topo.levels) img = leaky_relu(img, T(0.2));
  }
  return cfg.variant == Variant::kDl ? tanh_(img) : sigmoid(img);
}

}  // namespace gridcast
