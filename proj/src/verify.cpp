// SPDX-License-Identifier: Apache-2.0
#include "gridcast/verify.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gridcast/errors.hpp"
#include "gridcast/worldsim.hpp"

namespace fs = std::filesystem;

namespace gridcast {

RoundtripResult roundtrip_suite(int frames, std::uint64_t seed, double tol, int grid, int interior_margin) {
  RoundtripResult result;
  result.frames = frames;
  Rng rng(seed ^ 0x5bd1e995u);
  double acc = 0.0;
  for (int n = 0; n < frames; ++n) {
    ScenarioSpec spec;
    spec.mode = Mode::kHighway;
    spec.grid_h = spec.grid_w = grid;
    spec.meters_per_pixel = 0.5;
    spec.lanes = 3;
    spec.n_agents = 8;
    spec.length = 2;
    spec.seed = rng.next_u64();
    Rng world_rng(spec.seed);
    WorldState world = initial_world(spec, world_rng);
    RasterSpec raster;
    raster.h = raster.w = grid;
    raster.meters_per_pixel = 0.5;
    raster.anchor_row = raster.anchor_col = grid / 2.0;
    Ogm frame = rasterize(world, raster);

    WarpSpec d;
    d.dtheta = rng.uniform(-0.3, 0.3);
    d.dp_row = rng.uniform(-10.0, 10.0);
    d.dp_col = rng.uniform(-10.0, 10.0);
    d.pivot_row = frame.ego_anchor_row;
    d.pivot_col = frame.ego_anchor_col;

    Ogm round = oot(iot2(frame, d, Interp::kBilinear), d, Interp::kBilinear);
    double err = 0.0;
    long long count = 0;
    for (int c = 0; c < frame.c(); ++c)
      for (int i = interior_margin; i < frame.h() - interior_margin; ++i)
        for (int j = interior_margin; j < frame.w() - interior_margin; ++j) {
          err += std::abs(round.grid.at(c, i, j) - frame.grid.at(c, i, j));
          ++count;
        }
    const double mae = err / static_cast<double>(count);
    acc += mae;
    result.worst_mae = std::max(result.worst_mae, mae);
  }
  result.mean_mae = acc / static_cast<double>(frames);
  result.pass = result.mean_mae < tol;
  return result;
}

ad::GradCheckReport model_grad_check(const SequenceRecord& rec, const PredictorConfig& cfg, int k, double fd_step,
                                     double tol, int stride, std::uint64_t seed) {
  PredictorModel<double> proto(cfg);
  {
    Rng init(seed * 0x2545f4914f6cdd1dULL + 5);
    proto.init_params(init);
    // heads start at zero by design; nudge them off zero so their gradients
    // are exercised away from the degenerate point
    Rng nudge(seed + 99);
    for (auto& p : proto.params())
      if (p.zero_init)
        for (auto& v : p.value) v = nudge.uniform(-0.05, 0.05);
  }
  const GeomSpec geom = geom_from_record(rec);
  const int t = cfg.input_frames;
  if (rec.length < t + k) throw DataError("model_grad_check: record too short for the requested horizon");

  std::vector<ad::ParamBlock> blocks;
  for (const auto& p : proto.params()) blocks.push_back({p.name, p.shape, p.value});

  auto fn = [&rec, &geom, cfg, k, t, seed](const std::vector<ad::ParamBlock>& params,
                                           std::vector<std::vector<double>>* grads,
                                           std::vector<signed char>* sig) -> double {
    PredictorModel<double> model(cfg);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = model.params()[static_cast<std::size_t>(model.param_index(params[i].name))];
      p.value = params[i].value;
    }
    ad::Tape<double> tape;
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
    Rng rng(seed * 7 + 3);  // identical noise draws in every evaluation
    ad::Var<double> total{};
    for (int j = 0; j < k; ++j) {
      StepControls controls;
      controls.purpose = StepPurpose::kTrain;
      controls.latent_mode = j % 2 == 0 ? LatentMode::kForcePosterior : LatentMode::kForcePrior;
      controls.lambda = cfg.lambda_ssim;
      controls.recon = cfg.recon;
      const ActionCmd action = rec.actions[static_cast<std::size_t>(t - 1 + j)];
      const Ogm target = rec.frame(t + j);
      auto out = predict_step(bm, window, action, geom, controls, rng, &target);
      total = j == 0 ? out.loss_total : ad::add(total, out.loss_total);
    }
    const double value = total.scalar();
    if (grads) {
      tape.backward(total.id);
      grads->clear();
      for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& g = bm.p[static_cast<std::size_t>(model.param_index(params[i].name))].grad();
        grads->push_back(g.empty() ? std::vector<double>(params[i].value.size(), 0.0)
                                   : std::vector<double>(g.begin(), g.end()));
      }
    }
    if (sig) *sig = tape.kink_signature();
    return value;
  };
  return ad::grad_check(fn, blocks, fd_step, tol, stride);
}

std::vector<std::string> check_record(const std::string& dir) {
  std::vector<std::string> failures;
  SequenceRecord rec;
  try {
    rec = read_record(dir);
  } catch (const std::exception& e) {
    failures.push_back(std::string("read: ") + e.what());
    return failures;
  }
  try {
    validate_record(rec, dir);
  } catch (const std::exception& e) {
    failures.push_back(std::string("invariants: ") + e.what());
  }
  // manifest round trip
  {
    std::ifstream mf(fs::path(dir) / "manifest.txt", std::ios::binary);
    std::string text((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
    if (manifest_string(rec) != text) failures.push_back("manifest: rewrite differs from the stored manifest");
  }
  // measurements replay through the kinematic update
  if (rec.measurements.size() >= 2 && rec.actions.size() + 1 == rec.measurements.size()) {
    Measurements m = rec.measurements.front();
    double heading = 0.0;
    {
      const double s = std::hypot(m.v.x, m.v.y);
      heading = s > 0.0 ? std::atan2(m.v.y, m.v.x) : 0.0;
    }
    for (std::size_t i = 0; i < rec.actions.size(); ++i) {
      const auto r = measurement_step(m, rec.actions[i], rec.dt, heading);
      m = r.next;
      heading = r.heading_after;
      const auto& want = rec.measurements[i + 1];
      if (std::abs(m.p.x - want.p.x) > 1e-6 || std::abs(m.p.y - want.p.y) > 1e-6) {
        failures.push_back("replay: measurements diverge from the kinematic update at step " + std::to_string(i));
        break;
      }
    }
  }
  return failures;
}

}  // namespace gridcast
