// SPDX-License-Identifier: Apache-2.0
#include "gridcast/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "gridcast/errors.hpp"

namespace fs = std::filesystem;

namespace gridcast {

TrainConfig train_config_from_run(const RunConfig& run) {
  TrainConfig t;
  t.epochs = run.epochs;
  t.batch_size = run.batch_size;
  t.learning_rate = run.learning_rate;
  t.horizon = run.train_horizon;
  t.checkpoint_every = run.checkpoint_every;
  t.seed = run.seed;
  return t;
}

Trainer::Trainer(const RunConfig& run, const SequenceRecord& sample)
    : run_(resolved(run)),
      tcfg_(train_config_from_run(run_)),
      geom_(geom_from_record(sample)),
      model_(predictor_config_from_run(run_, sample)),
      rng_(run_.seed * 0x9e3779b97f4a7c15ULL + 1) {}

void Trainer::init() {
  Rng init_rng(run_.seed * 0x51afd6ed558ccd25ULL + 2);
  model_.init_params(init_rng);
  adam_.m.clear();
  adam_.v.clear();
  for (const auto& p : model_.params()) {
    adam_.m.emplace_back(p.value.size(), 0.0f);
    adam_.v.emplace_back(p.value.size(), 0.0f);
  }
  adam_.t = 0;
  global_step_ = 0;
  epoch_ = 0;
  idx_in_epoch_ = 0;
  nan_abort_ = false;
  curve_.clear();
  rng_ = Rng(run_.seed * 0x9e3779b97f4a7c15ULL + 1);
  snapshot_last_good();
}

std::vector<int> Trainer::epoch_order(std::size_t n) const {
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  // re-derivable shuffle so a resumed run sees the same epoch order
  Rng shuffle_rng(run_.seed * 0xdeadbeefcafef00dULL + static_cast<std::uint64_t>(epoch_) * 7919ULL + 13ULL);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

void Trainer::snapshot_last_good() {
  last_good_.clear();
  for (const auto& p : model_.params()) last_good_.push_back(p.value);
}

void Trainer::restore_last_good() {
  for (std::size_t i = 0; i < last_good_.size(); ++i) model_.params()[i].value = last_good_[i];
}

LossBreakdown Trainer::step(const std::vector<SequenceRecord>& data) {
  if (nan_abort_) throw NumericError("trainer aborted on non-finite loss; reload a checkpoint to continue");
  if (data.empty()) throw DataError("train step: empty dataset");
  const PredictorConfig& cfg = model_.config();
  const int t = cfg.input_frames, k = tcfg_.horizon;
  for (const auto& rec : data)
    if (rec.length < t + k)
      throw DataError("train step: sequence length " + std::to_string(rec.length) + " shorter than input_frames+k=" +
                      std::to_string(t + k));

  auto order = epoch_order(data.size());
  std::vector<int> batch;
  for (int b = 0; b < tcfg_.batch_size; ++b) {
    batch.push_back(order[static_cast<std::size_t>(idx_in_epoch_)]);
    ++idx_in_epoch_;
    if (idx_in_epoch_ >= static_cast<int>(data.size())) {
      idx_in_epoch_ = 0;
      ++epoch_;
      order = epoch_order(data.size());
    }
  }

  // the whole batch switches between prior and posterior samples together
  const bool use_prior = rng_.uniform() * 100.0 < cfg.eta_percent;
  StepControls controls;
  controls.purpose = StepPurpose::kTrain;
  controls.latent_mode = use_prior ? LatentMode::kForcePrior : LatentMode::kForcePosterior;
  controls.lambda = cfg.lambda_ssim;
  controls.recon = cfg.recon;

  std::vector<std::vector<float>> grad_acc;
  for (const auto& p : model_.params()) grad_acc.emplace_back(p.value.size(), 0.0f);
  LossBreakdown batch_values;
  bool finite = true;

  for (int idx : batch) {
    const SequenceRecord& rec = data[static_cast<std::size_t>(idx)];
    const int max_start = rec.length - t - k;
    const int w = max_start > 0 ? rng_.uniform_int(0, max_start) : 0;

    ad::Tape<float> tape;
    auto bm = model_.bind(tape);
    std::vector<Ogm> frames;
    std::vector<Measurements> meas;
    std::vector<ActionCmd> past;
    for (int i = 0; i < t; ++i) {
      frames.push_back(rec.frame(w + i));
      meas.push_back(rec.measurements[static_cast<std::size_t>(w + i)]);
      if (i + 1 < t) past.push_back(rec.actions[static_cast<std::size_t>(w + i)]);
    }
    auto window = make_tape_window(tape, cfg, geom_, frames, meas, past);

    ad::Var<float> total{};
    LossBreakdown sample_values;
    for (int j = 0; j < k; ++j) {
      const ActionCmd action = rec.actions[static_cast<std::size_t>(w + t - 1 + j)];
      const Ogm target = rec.frame(w + t + j);
      auto out = predict_step(bm, window, action, geom_, controls, rng_, &target);
      total = j == 0 ? out.loss_total : ad::add(total, out.loss_total);
      sample_values.rec += out.loss_values.rec;
      sample_values.ssim += out.loss_values.ssim;
      sample_values.kl += out.loss_values.kl;
      sample_values.total += out.loss_values.total;
    }
    if (!std::isfinite(sample_values.total)) {
      finite = false;
      break;
    }
    tape.backward(total.id);
    for (std::size_t pi = 0; pi < grad_acc.size(); ++pi) {
      const auto& g = bm.p[pi].grad();
      if (g.empty()) continue;
      for (std::size_t i = 0; i < g.size(); ++i) grad_acc[pi][i] += g[i];
    }
    batch_values.rec += sample_values.rec;
    batch_values.ssim += sample_values.ssim;
    batch_values.kl += sample_values.kl;
    batch_values.total += sample_values.total;
  }

  if (!finite) {
    restore_last_good();
    nan_abort_ = true;
    throw NumericError("non-finite training loss at step " + std::to_string(global_step_) +
                       "; parameters rolled back to the last good step");
  }

  const float inv_batch = 1.0f / static_cast<float>(tcfg_.batch_size);
  batch_values.rec *= inv_batch;
  batch_values.ssim *= inv_batch;
  batch_values.kl *= inv_batch;
  batch_values.total *= inv_batch;

  ++adam_.t;
  const float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
  const float lr = static_cast<float>(tcfg_.learning_rate);
  const float c1 = 1.0f - std::pow(b1, static_cast<float>(adam_.t));
  const float c2 = 1.0f - std::pow(b2, static_cast<float>(adam_.t));
  auto& params = model_.params();
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi].value;
    auto& m = adam_.m[pi];
    auto& v = adam_.v[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const float g = grad_acc[pi][i] * inv_batch;
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      const float mh = m[i] / c1;
      const float vh = v[i] / c2;
      p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  snapshot_last_good();
  ++global_step_;
  curve_.push_back(batch_values);
  return batch_values;
}

Trainer::Summary Trainer::run(const std::vector<SequenceRecord>& data, const RunOptions& opts) {
  Summary summary;
  std::ofstream csv;
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    csv.open(fs::path(opts.out_dir) / "loss.csv", std::ios::binary | std::ios::app);
    if (csv.tellp() == 0) csv << "step,epoch,rec,ssim,kl,total\n";
  }
  const long long steps_per_epoch = std::max<long long>(1, static_cast<long long>(data.size()) / tcfg_.batch_size);
  long long budget = opts.max_steps >= 0 ? opts.max_steps : steps_per_epoch * tcfg_.epochs;
  const auto start = std::chrono::steady_clock::now();
  while (summary.steps < budget) {
    if (opts.max_seconds > 0) {
      const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (elapsed > opts.max_seconds) break;
    }
    LossBreakdown values;
    try {
      values = step(data);
    } catch (const NumericError&) {
      summary.nan_abort = true;
      if (!opts.out_dir.empty()) save_checkpoint((fs::path(opts.out_dir) / "last_good.ckpt").string());
      break;
    }
    summary.curve.push_back(values);
    ++summary.steps;
    if (csv.is_open()) {
      char line[256];
      std::snprintf(line, sizeof(line), "%lld,%d,%.9g,%.9g,%.9g,%.9g\n", global_step_ - 1, epoch_, values.rec,
                    values.ssim, values.kl, values.total);
      csv << line;
      csv.flush();
    }
    if (!opts.out_dir.empty() && tcfg_.checkpoint_every > 0 && global_step_ % tcfg_.checkpoint_every == 0)
      save_checkpoint((fs::path(opts.out_dir) / "checkpoint.ckpt").string());
  }
  if (!opts.out_dir.empty() && !summary.nan_abort)
    save_checkpoint((fs::path(opts.out_dir) / "checkpoint.ckpt").string());
  return summary;
}

// ---- binary container helpers ---------------------------------------------------

namespace {

void put_u32(std::ofstream& f, std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ofstream& f, std::uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t get_u32(std::ifstream& f, const std::string& what) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  if (!f) throw DataError("truncated container while reading " + what);
  return v;
}

std::uint64_t get_u64(std::ifstream& f, const std::string& what) {
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 8);
  if (!f) throw DataError("truncated container while reading " + what);
  return v;
}

void put_blob(std::ofstream& f, const std::string& s) {
  put_u64(f, s.size());
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_blob(std::ifstream& f, const std::string& what) {
  const std::uint64_t n = get_u64(f, what);
  std::string s(n, '\0');
  f.read(s.data(), static_cast<std::streamsize>(n));
  if (!f) throw DataError("truncated container while reading " + what);
  return s;
}

void put_floats(std::ofstream& f, const std::vector<float>& v) {
  put_u64(f, v.size());
  f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

std::vector<float> get_floats(std::ifstream& f, const std::string& what) {
  const std::uint64_t n = get_u64(f, what);
  std::vector<float> v(n);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!f) throw DataError("truncated container while reading " + what);
  return v;
}

void put_shape(std::ofstream& f, const ad::Shape& s) {
  put_u32(f, static_cast<std::uint32_t>(s.size()));
  for (int d : s) put_u32(f, static_cast<std::uint32_t>(d));
}

ad::Shape get_shape(std::ifstream& f, const std::string& what) {
  const std::uint32_t nd = get_u32(f, what);
  ad::Shape s;
  for (std::uint32_t i = 0; i < nd; ++i) s.push_back(static_cast<int>(get_u32(f, what)));
  return s;
}

constexpr char kSnapshotMagic[8] = {'G', 'C', 'P', 'M', '0', '0', '0', '1'};
constexpr char kCheckpointMagic[8] = {'G', 'C', 'C', 'K', '0', '0', '0', '1'};

}  // namespace

void save_snapshot(const PredictorModel<float>& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write snapshot: " + path);
  f.write(kSnapshotMagic, 8);
  put_blob(f, predictor_config_string(model.config()));
  put_u32(f, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    put_blob(f, p.name);
    put_shape(f, p.shape);
    put_floats(f, p.value);
  }
  if (!f) throw DataError("short write: " + path);
}

PredictorModel<float> load_snapshot(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open snapshot: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kSnapshotMagic, 8) != 0) throw DataError("not a parameter snapshot: " + path);
  PredictorConfig cfg = parse_predictor_config(get_blob(f, "config"));
  PredictorModel<float> model(cfg);
  const std::uint32_t n = get_u32(f, "tensor count");
  if (n != model.params().size()) throw DataError("snapshot tensor count mismatch in " + path);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = get_blob(f, "tensor name");
    const ad::Shape shape = get_shape(f, name);
    std::vector<float> vals = get_floats(f, name);
    const int idx = model.param_index(name);
    auto& p = model.params()[static_cast<std::size_t>(idx)];
    if (p.shape != shape || p.value.size() != vals.size()) throw DataError("snapshot shape mismatch for " + name);
    p.value = std::move(vals);
  }
  return model;
}

void Trainer::save_checkpoint(const std::string& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint: " + path);
  f.write(kCheckpointMagic, 8);
  put_blob(f, config_string(run_));
  put_blob(f, predictor_config_string(model_.config()));
  put_u64(f, static_cast<std::uint64_t>(global_step_));
  put_u32(f, static_cast<std::uint32_t>(epoch_));
  put_u32(f, static_cast<std::uint32_t>(idx_in_epoch_));
  put_u64(f, static_cast<std::uint64_t>(adam_.t));
  put_blob(f, rng_.serialize());
  put_u32(f, static_cast<std::uint32_t>(model_.params().size()));
  for (std::size_t i = 0; i < model_.params().size(); ++i) {
    const auto& p = model_.params()[i];
    put_blob(f, p.name);
    put_shape(f, p.shape);
    put_floats(f, p.value);
    put_floats(f, adam_.m[i]);
    put_floats(f, adam_.v[i]);
  }
  if (!f) throw DataError("short write: " + path);
}

Trainer Trainer::load_checkpoint(const std::string& path, const SequenceRecord& sample) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw DataError("not a checkpoint: " + path);
  const RunConfig run = parse_run_config_text(get_blob(f, "run config"));
  const PredictorConfig pcfg = parse_predictor_config(get_blob(f, "predictor config"));
  Trainer tr(run, sample);
  if (predictor_config_string(tr.model_.config()) != predictor_config_string(pcfg))
    throw DataError("checkpoint predictor configuration does not match the dataset shapes: " + path);
  tr.global_step_ = static_cast<long long>(get_u64(f, "step"));
  tr.epoch_ = static_cast<int>(get_u32(f, "epoch"));
  tr.idx_in_epoch_ = static_cast<int>(get_u32(f, "epoch index"));
  tr.adam_.t = static_cast<long long>(get_u64(f, "adam step"));
  tr.rng_.deserialize(get_blob(f, "rng state"));
  const std::uint32_t n = get_u32(f, "tensor count");
  if (n != tr.model_.params().size()) throw DataError("checkpoint tensor count mismatch in " + path);
  tr.adam_.m.assign(n, {});
  tr.adam_.v.assign(n, {});
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = get_blob(f, "tensor name");
    const ad::Shape shape = get_shape(f, name);
    std::vector<float> vals = get_floats(f, name);
    std::vector<float> m = get_floats(f, name + ".m");
    std::vector<float> v = get_floats(f, name + ".v");
    const int idx = tr.model_.param_index(name);
    auto& p = tr.model_.params()[static_cast<std::size_t>(idx)];
    if (p.shape != shape) throw DataError("checkpoint shape mismatch for " + name);
    p.value = std::move(vals);
    tr.adam_.m[static_cast<std::size_t>(idx)] = std::move(m);
    tr.adam_.v[static_cast<std::size_t>(idx)] = std::move(v);
  }
  tr.snapshot_last_good();
  return tr;
}

// ---- rollout ----------------------------------------------------------------------

std::vector<Ogm> rollout_model(const PredictorModel<float>& model, const SequenceRecord& rec, int k, bool stochastic,
                               std::uint64_t seed, DecoderStub stub) {
  const PredictorConfig& cfg = model.config();
  const int t = cfg.input_frames;
  if (rec.length < t + k)
    throw DataError("rollout: record length " + std::to_string(rec.length) + " shorter than input_frames+k=" +
                    std::to_string(t + k));
  GeomSpec geom = geom_from_record(rec);
  ad::Tape<float> tape;
  auto bm = model.bind(tape);
  std::vector<Ogm> frames;
  std::vector<Measurements> meas;
  std::vector<ActionCmd> past;
  for (int i = 0; i < t; ++i) {
    frames.push_back(rec.frame(i));
    meas.push_back(rec.measurements[static_cast<std::size_t>(i)]);
    if (i + 1 < t) past.push_back(rec.actions[static_cast<std::size_t>(i)]);
  }
  auto window = make_tape_window(tape, cfg, geom, frames, meas, past);
  StepControls controls;
  controls.purpose = stochastic ? StepPurpose::kEvalSample : StepPurpose::kEvalMean;
  controls.latent_mode = stochastic ? LatentMode::kSamplePrior : LatentMode::kPriorMean;
  controls.stub = stub;
  Rng rng(seed ^ 0xabcdef1234567890ULL);
  std::vector<Ogm> out;
  Ogm shell = rec.frame_shell();
  for (int j = 0; j < k; ++j) {
    const ActionCmd action = rec.actions[static_cast<std::size_t>(t - 1 + j)];
    Ogm truth;
    const Ogm* truth_ptr = nullptr;
    if (stub == DecoderStub::kOracle) {
      truth = rec.frame(t + j);
      truth_ptr = &truth;
    }
    auto step = predict_step(bm, window, action, geom, controls, rng, truth_ptr);
    Ogm pred = shell;
    const auto& vals = step.fed_back.val();
    for (std::size_t i = 0; i < vals.size(); ++i) pred.grid.data[i] = std::clamp(vals[i], 0.0f, 1.0f);
    out.push_back(std::move(pred));
  }
  return out;
}

RolloutFn model_rollout_fn(const PredictorModel<float>& model, bool stochastic, std::uint64_t seed) {
  return [&model, stochastic, seed](const SequenceRecord& rec, int k) {
    return rollout_model(model, rec, k, stochastic, seed);
  };
}

RolloutFn persistence_rollout_fn(int input_frames, Interp interp, double ego_len_px, double ego_wid_px) {
  return [input_frames, interp, ego_len_px, ego_wid_px](const SequenceRecord& rec, int k) {
    const int t = input_frames;
    if (rec.length < t) throw DataError("persistence rollout: record shorter than the input window");
    GeomSpec geom = geom_from_record(rec);
    Ogm cur = rec.frame(t - 1);
    Measurements meas = rec.measurements[static_cast<std::size_t>(t - 1)];
    double heading = 0.0;
    for (int i = 0; i < t; ++i) {
      const auto& m = rec.measurements[static_cast<std::size_t>(i)];
      const double s = std::hypot(m.v.x, m.v.y);
      heading = s > 0.0 ? std::atan2(m.v.y, m.v.x) : heading;
    }
    const Grid stamp = canonical_ego_channel(geom, ego_len_px, ego_wid_px);
    std::vector<Ogm> out;
    for (int j = 0; j < k; ++j) {
      const ActionCmd action = rec.actions[static_cast<std::size_t>(t - 1 + j)];
      const auto step = measurement_step(meas, action, geom.dt, heading);
      const WarpSpec spec = warp_spec_from_delta(step.delta, step.heading_before, cur);
      Ogm j_ego = iot1(cur, spec, interp);
      Ogm next = oot(j_ego, spec, interp);
      const int ego_ch = next.ego_channel();
      const std::size_t plane = static_cast<std::size_t>(next.h()) * next.w();
      std::copy(stamp.data.begin(), stamp.data.end(), next.grid.data.begin() + ego_ch * plane);
      out.push_back(next);
      cur = next;
      meas = step.next;
      heading = step.heading_after;
    }
    return out;
  };
}

// ---- ablation -----------------------------------------------------------------------

std::vector<std::string> ablation_cells() { return {"full", "no_rbm", "no_bcde", "no_me"}; }

RunConfig with_ablation(RunConfig base, const std::string& cell) {
  base.no_rbm = false;
  base.no_bcde = false;
  base.no_me = false;
  if (cell == "full") return base;
  if (cell == "no_rbm") {
    base.no_rbm = true;
    return base;
  }
  if (cell == "no_bcde") {
    base.no_bcde = true;
    return base;
  }
  if (cell == "no_me") {
    base.no_me = true;
    return base;
  }
  throw ConfigError("unknown ablation cell: " + cell);
}

std::vector<AblationCellResult> ablate(const std::map<std::string, std::string>& cell_checkpoints,
                                       const std::vector<SequenceRecord>& regular_data,
                                       const std::vector<SequenceRecord>& rare_data, int input_frames,
                                       const std::vector<int>& horizons, const KdeModel* kde) {
  std::vector<AblationCellResult> out;
  for (const std::string& cell : ablation_cells()) {
    auto it = cell_checkpoints.find(cell);
    if (it == cell_checkpoints.end() || !fs::exists(it->second))
      throw DataError("ablation cell '" + cell + "' has no trained checkpoint");
  }
  for (const std::string& cell : ablation_cells()) {
    PredictorModel<float> model = load_snapshot(cell_checkpoints.at(cell));
    AblationCellResult r;
    r.cell = cell;
    r.regular = evaluate(model_rollout_fn(model, false, 0), regular_data, input_frames, horizons, kde);
    r.rare = evaluate(model_rollout_fn(model, false, 0), rare_data, input_frames, horizons, kde);
    out.push_back(std::move(r));
  }
  return out;
}

std::string loss_csv(const std::vector<LossBreakdown>& curve) {
  std::string out = "step,rec,ssim,kl,total\n";
  char line[256];
  for (std::size_t i = 0; i < curve.size(); ++i) {
    std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g,%.9g\n", i, curve[i].rec, curve[i].ssim, curve[i].kl,
                  curve[i].total);
    out += line;
  }
  return out;
}

}  // namespace gridcast
