// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gridcast/errors.hpp"
#include "gridcast/pipeline.hpp"
#include "gridcast/worldsim.hpp"

using namespace gridcast;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("gridcast_pipe_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig tiny_run(std::uint64_t seed = 3) {
  RunConfig run;
  run.mode = Mode::kUrban;
  run.grid_h = run.grid_w = 16;
  run.meters_per_pixel = 0.5;
  run.sequence_length = 12;
  run.n_agents = 3;
  run.lanes = 2;
  run.seed = seed;
  run.latent_dim = 8;
  run.base_channels = 4;
  run.input_frames = 3;
  run.train_horizon = 2;
  run.batch_size = 2;
  run.epochs = 2;
  return run;
}

std::vector<SequenceRecord> tiny_data(const RunConfig& run, int count) {
  std::vector<SequenceRecord> data;
  for (int i = 0; i < count; ++i) {
    ScenarioSpec s = scenario_from_config(run);
    s.seed = run.seed * 101 + static_cast<std::uint64_t>(i);
    data.push_back(generate(s));
  }
  return data;
}

}  // namespace

TEST_CASE("a training step returns finite losses and changes the parameters") {
  RunConfig run = tiny_run();
  auto data = tiny_data(run, 4);
  Trainer tr(run, data.front());
  tr.init();
  const auto before = tr.model().params().front().value;
  const LossBreakdown v = tr.step(data);
  CHECK(std::isfinite(v.total));
  CHECK(v.total > 0.0);
  CHECK(v.kl >= -1e-6);
  CHECK(tr.model().params().front().value != before);
  CHECK(tr.global_step() == 1);
}

TEST_CASE("training is reproducible: same seed gives an identical loss curve") {
  RunConfig run = tiny_run(7);
  auto data = tiny_data(run, 4);
  std::vector<double> first;
  for (int rep = 0; rep < 2; ++rep) {
    Trainer tr(run, data.front());
    tr.init();
    std::vector<double> totals;
    for (int s = 0; s < 5; ++s) totals.push_back(tr.step(data).total);
    if (rep == 0)
      first = totals;
    else
      for (std::size_t i = 0; i < totals.size(); ++i) CHECK(totals[i] == doctest::Approx(first[i]).epsilon(1e-9));
  }
}

TEST_CASE("different eta settings produce different parameter trajectories") {
  RunConfig run_a = tiny_run(9);
  run_a.eta_percent = 0.0;
  RunConfig run_b = run_a;
  run_b.eta_percent = 100.0;
  auto data = tiny_data(run_a, 4);
  Trainer ta(run_a, data.front());
  Trainer tb(run_b, data.front());
  ta.init();
  tb.init();
  for (int s = 0; s < 3; ++s) {
    ta.step(data);
    tb.step(data);
  }
  bool any_diff = false;
  for (std::size_t pi = 0; pi < ta.model().params().size() && !any_diff; ++pi)
    any_diff = ta.model().params()[pi].value != tb.model().params()[pi].value;
  CHECK(any_diff);
}

TEST_CASE("checkpoint resume continues bit-exactly") {
  RunConfig run = tiny_run(11);
  auto data = tiny_data(run, 4);
  const auto dir = temp_dir("resume");

  Trainer full(run, data.front());
  full.init();
  std::vector<double> full_curve;
  for (int s = 0; s < 6; ++s) full_curve.push_back(full.step(data).total);

  Trainer half(run, data.front());
  half.init();
  for (int s = 0; s < 3; ++s) half.step(data);
  const std::string ckpt = (dir / "mid.ckpt").string();
  half.save_checkpoint(ckpt);
  Trainer resumed = Trainer::load_checkpoint(ckpt, data.front());
  std::vector<double> tail;
  for (int s = 0; s < 3; ++s) tail.push_back(resumed.step(data).total);
  for (int s = 0; s < 3; ++s) CHECK(tail[static_cast<std::size_t>(s)] == full_curve[static_cast<std::size_t>(s + 3)]);
  for (std::size_t pi = 0; pi < full.model().params().size(); ++pi)
    CHECK(resumed.model().params()[pi].value == full.model().params()[pi].value);
}

TEST_CASE("parameter snapshots round-trip bit-exactly") {
  RunConfig run = tiny_run(13);
  auto data = tiny_data(run, 2);
  Trainer tr(run, data.front());
  tr.init();
  tr.step(data);
  const auto dir = temp_dir("snapshot");
  const std::string path = (dir / "model.params").string();
  save_snapshot(tr.model(), path);
  PredictorModel<float> back = load_snapshot(path);
  REQUIRE(back.params().size() == tr.model().params().size());
  for (std::size_t i = 0; i < back.params().size(); ++i) {
    CHECK(back.params()[i].name == tr.model().params()[i].name);
    CHECK(back.params()[i].value == tr.model().params()[i].value);
  }
  CHECK(predictor_config_string(back.config()) == predictor_config_string(tr.model().config()));
}

TEST_CASE("model rollout produces k valid frames and is deterministic in mean mode") {
  RunConfig run = tiny_run(17);
  auto data = tiny_data(run, 2);
  Trainer tr(run, data.front());
  tr.init();
  const int k = 4;
  auto a = rollout_model(tr.model(), data[1], k, false, 0);
  auto b = rollout_model(tr.model(), data[1], k, false, 99);  // seed must not matter in mean mode
  REQUIRE(static_cast<int>(a.size()) == k);
  for (int j = 0; j < k; ++j) {
    CHECK_NOTHROW(validate(a[static_cast<std::size_t>(j)], "rollout frame"));
    CHECK(a[static_cast<std::size_t>(j)].grid.data == b[static_cast<std::size_t>(j)].grid.data);
  }
}

TEST_CASE("rollout of horizon one matches a single predict step") {
  RunConfig run = tiny_run(19);
  auto data = tiny_data(run, 2);
  Trainer tr(run, data.front());
  tr.init();
  auto one = rollout_model(tr.model(), data[1], 1, false, 0);
  auto two = rollout_model(tr.model(), data[1], 2, false, 0);
  CHECK(one[0].grid.data == two[0].grid.data);
}

TEST_CASE("persistence rollout freezes the world in world coordinates") {
  RunConfig run = tiny_run(23);
  run.grid_h = run.grid_w = 32;
  run.sequence_length = 16;
  auto data = tiny_data(run, 1);
  auto fn = persistence_rollout_fn(run.input_frames, Interp::kBilinear, run.ego_len_px, run.ego_wid_px);
  auto preds = fn(data[0], 5);
  REQUIRE(preds.size() == 5);
  for (const auto& p : preds) CHECK_NOTHROW(validate(p, "persistence frame"));
  // ego channel stays the canonical stamp
  GeomSpec geom = geom_from_record(data[0]);
  const Grid stamp = canonical_ego_channel(geom, run.ego_len_px, run.ego_wid_px);
  const int ego_ch = preds[0].ego_channel();
  const std::size_t plane = static_cast<std::size_t>(geom.h) * geom.w;
  for (const auto& p : preds)
    for (std::size_t i = 0; i < plane; ++i)
      CHECK(p.grid.data[ego_ch * plane + i] == stamp.data[i]);
}

TEST_CASE("evaluate with a model rollout yields a complete report") {
  RunConfig run = tiny_run(29);
  run.sequence_length = 10;
  auto data = tiny_data(run, 3);
  Trainer tr(run, data.front());
  tr.init();
  KdeModel kde = kde_fit_frames(data, 20);
  EvalReport rep = evaluate(model_rollout_fn(tr.model(), false, 0), data, run.input_frames, {1, 3}, &kde);
  REQUIRE(rep.rows.size() == 2);
  for (const auto& r : rep.rows) {
    CHECK(std::isfinite(r.mse.mean));
    CHECK(r.all.has_value());
  }
}

TEST_CASE("nan losses abort with a rollback instead of corrupting the model") {
  RunConfig run = tiny_run(31);
  auto data = tiny_data(run, 2);
  Trainer tr(run, data.front());
  tr.init();
  tr.step(data);
  const int idx = tr.model().param_index("post_enc.mu.b");
  const auto good = tr.model().params()[static_cast<std::size_t>(idx)].value;
  // poison the posterior mean head: its KL path has no rectifier to swallow the NaN
  tr.model().params()[static_cast<std::size_t>(idx)].value.front() = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(tr.step(data), NumericError);
  CHECK(tr.nan_aborted());
  CHECK(tr.model().params()[static_cast<std::size_t>(idx)].value == good);
}

TEST_CASE("ablation configs differ from the base in exactly one flag") {
  RunConfig base = tiny_run(37);
  for (const auto& cell : ablation_cells()) {
    RunConfig c = with_ablation(base, cell);
    int diffs = 0;
    diffs += c.no_rbm != false ? 1 : 0;
    diffs += c.no_bcde != false ? 1 : 0;
    diffs += c.no_me != false ? 1 : 0;
    CHECK(diffs == (cell == "full" ? 0 : 1));
  }
  CHECK_THROWS_AS(with_ablation(base, "no_everything"), ConfigError);
}

TEST_CASE("the ablation harness evaluates every cell and rejects missing checkpoints") {
  RunConfig run = tiny_run(41);
  run.sequence_length = 10;
  auto regular = tiny_data(run, 2);
  RunConfig rare_cfg = run;
  rare_cfg.action_policy = ActionPolicy::kRareSample;
  auto rare = tiny_data(rare_cfg, 2);
  const auto dir = temp_dir("ablate");

  std::map<std::string, std::string> cells;
  for (const auto& cell : ablation_cells()) {
    RunConfig c = with_ablation(run, cell);
    Trainer tr(c, regular.front());
    tr.init();
    tr.step(regular);
    const std::string path = (dir / (cell + ".params")).string();
    save_snapshot(tr.model(), path);
    cells[cell] = path;
  }
  auto matrix = ablate(cells, regular, rare, run.input_frames, {1, 2}, nullptr);
  CHECK(matrix.size() == 4);
  for (const auto& r : matrix) {
    CHECK(r.regular.rows.size() == 2);
    CHECK(r.rare.rows.size() == 2);
  }
  cells.erase("no_me");
  CHECK_THROWS_WITH_AS(ablate(cells, regular, rare, run.input_frames, {1}, nullptr), doctest::Contains("no_me"),
                       DataError);
}

TEST_CASE("loss csv has one row per step") {
  std::vector<LossBreakdown> curve = {{0.5, 0.9, 0.1, 0.7}, {0.4, 0.91, 0.09, 0.6}};
  const std::string csv = loss_csv(curve);
  CHECK(csv.find("step,rec,ssim,kl,total") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
