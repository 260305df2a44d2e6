// SPDX-License-Identifier: Apache-2.0
#include "gridcast/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "gridcast/errors.hpp"
#include "gridcast/pipeline.hpp"
#include "gridcast/verify.hpp"
#include "gridcast/worldsim.hpp"

namespace fs = std::filesystem;

namespace gridcast {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitData = 4;

std::vector<int> parse_horizons(const std::string& text) {
  std::vector<int> out;
  std::string cur;
  for (char ch : text + ",") {
    if (ch == ',') {
      if (!cur.empty()) {
        try {
          out.push_back(std::stoi(cur));
        } catch (const std::exception&) {
          throw ConfigError("bad horizon value '" + cur + "'");
        }
        if (out.back() < 1) throw ConfigError("horizons must be positive");
        cur.clear();
      }
    } else {
      cur += ch;
    }
  }
  if (out.empty()) throw ConfigError("no horizons given");
  return out;
}

RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return resolved(RunConfig{});
  return resolved(load_run_config(path));
}

int cmd_gen(const std::string& config_path, const std::string& out_dir, long long seed_override, int count) {
  RunConfig cfg = load_config_or_default(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<unsigned long long>(seed_override);
  if (count < 1) throw ConfigError("--count must be at least 1");
  fs::create_directories(out_dir);
  write_config(cfg, (fs::path(out_dir) / "config_resolved.txt").string());
  for (int i = 0; i < count; ++i) {
    ScenarioSpec spec = scenario_from_config(cfg);
    spec.seed = cfg.seed + static_cast<std::uint64_t>(i);
    SequenceRecord rec = generate(spec);
    const std::string name = record_dir_name(i);
    write_record(rec, (fs::path(out_dir) / name).string());
    std::cout << name << " collision=" << (rec.collision ? 1 : 0) << "\n";
  }
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out_dir,
              const std::string& resume_path) {
  RunConfig cfg = load_config_or_default(config_path);
  auto data = load_dataset(data_dir);
  fs::create_directories(out_dir);
  write_config(cfg, (fs::path(out_dir) / "config_resolved.txt").string());

  Trainer trainer = resume_path.empty() ? Trainer(cfg, data.front()) : Trainer::load_checkpoint(resume_path, data.front());
  if (resume_path.empty()) trainer.init();

  Trainer::RunOptions opts;
  opts.out_dir = out_dir;
  auto summary = trainer.run(data, opts);
  if (summary.nan_abort) {
    std::cerr << "training aborted on a non-finite loss; last good checkpoint written\n";
    return kExitNumeric;
  }
  save_snapshot(trainer.model(), (fs::path(out_dir) / "model.params").string());
  const auto& curve = trainer.curve();
  std::cout << "trained " << summary.steps << " steps";
  if (!curve.empty()) std::cout << ", final total loss " << curve.back().total;
  std::cout << "\ncheckpoint: " << (fs::path(out_dir) / "checkpoint.ckpt").string() << "\n";
  std::cout << "snapshot:   " << (fs::path(out_dir) / "model.params").string() << "\n";
  return kExitOk;
}

bool is_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  char magic[8] = {};
  f.read(magic, 8);
  return f && magic[0] == 'G' && magic[1] == 'C' && magic[2] == 'C' && magic[3] == 'K';
}

PredictorModel<float> load_model_any(const std::string& path, const SequenceRecord& sample) {
  if (is_checkpoint_file(path)) {
    Trainer tr = Trainer::load_checkpoint(path, sample);
    return std::move(tr.model());
  }
  return load_snapshot(path);
}

int cmd_eval(const std::string& checkpoint, const std::string& stub, const std::string& config_path,
             const std::string& data_dir, const std::string& kde_dir, const std::string& out_dir,
             const std::string& horizons_text, const std::string& suite, long long seed, bool sample_mode,
             const std::string& dump_dir) {
  const std::vector<int> horizons = parse_horizons(horizons_text);
  if (suite != "regular" && suite != "rare") throw ConfigError("--suite must be regular or rare");
  if (checkpoint.empty() && stub.empty()) throw ConfigError("eval needs --checkpoint or --stub persistence|oracle");
  if (!checkpoint.empty() && !stub.empty()) throw ConfigError("--checkpoint and --stub are mutually exclusive");
  if (!stub.empty() && stub != "persistence" && stub != "oracle") throw ConfigError("unknown stub '" + stub + "'");
  auto data = load_dataset(data_dir);

  RunConfig cfg = load_config_or_default(config_path);
  int start_frame = cfg.input_frames;

  RolloutFn rollout;
  std::string source;
  PredictorModel<float> model(predictor_config_from_run(cfg, data.front()));  // placeholder shapes for stubs
  if (!checkpoint.empty()) {
    model = load_model_any(checkpoint, data.front());
    const PredictorConfig& mc = model.config();
    if (mc.grid_h != data.front().h || mc.grid_w != data.front().w || mc.channels != data.front().c)
      throw DataError("checkpoint shape " + std::to_string(mc.grid_h) + "x" + std::to_string(mc.grid_w) + "x" +
                      std::to_string(mc.channels) + " does not match dataset shape " + std::to_string(data.front().h) +
                      "x" + std::to_string(data.front().w) + "x" + std::to_string(data.front().c));
    start_frame = mc.input_frames;
    rollout = model_rollout_fn(model, sample_mode, static_cast<std::uint64_t>(seed < 0 ? 0 : seed));
    source = checkpoint;
  } else if (stub == "persistence") {
    rollout = persistence_rollout_fn(cfg.input_frames, cfg.warp_interp == WarpInterp::kNearest ? Interp::kNearest
                                                                                               : Interp::kBilinear,
                                     cfg.ego_len_px, cfg.ego_wid_px);
    source = "stub:persistence";
  } else {
    rollout = oracle_rollout(start_frame);
    source = "stub:oracle";
  }

  KdeModel kde;
  const KdeModel* kde_ptr = nullptr;
  if (!kde_dir.empty() || !data.empty()) {
    auto kde_data = kde_dir.empty() ? data : load_dataset(kde_dir);
    kde = kde_fit_frames(kde_data, cfg.kde_refs);
    kde_ptr = &kde;
  }

  EvalReport report = evaluate(rollout, data, start_frame, horizons, kde_ptr);
  std::ostringstream header;
  header << "suite=" << suite << " horizons=";
  for (std::size_t i = 0; i < horizons.size(); ++i) header << (i ? "," : "") << horizons[i];
  header << " source=" << source << " sequences=" << data.size() << "\n";
  std::cout << header.str() << report.to_table();
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream csv(fs::path(out_dir) / "report.csv", std::ios::binary);
    csv << report.to_csv();
    std::ofstream txt(fs::path(out_dir) / "report.txt", std::ios::binary);
    txt << header.str() << report.to_table();
  }
  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    const int k_max = *std::max_element(horizons.begin(), horizons.end());
    for (std::size_t r = 0; r < data.size(); ++r) {
      const auto preds = rollout(data[r], k_max);
      for (int k : horizons) {
        const Ogm& pred = preds[static_cast<std::size_t>(k - 1)];
        const Ogm truth = data[r].frame(start_frame + k - 1);
        for (int c = 0; c < pred.c(); ++c) {
          char name[128];
          std::snprintf(name, sizeof(name), "seq%03zu_k%02d_c%d", r, k, c);
          std::vector<std::uint8_t> buf(static_cast<std::size_t>(pred.h()) * pred.w());
          const std::size_t plane = buf.size();
          for (std::size_t i = 0; i < plane; ++i) buf[i] = quantize_value(pred.grid.data[c * plane + i]);
          write_pgm((fs::path(dump_dir) / (std::string("pred_") + name + ".pgm")).string(), buf.data(), pred.h(),
                    pred.w());
          for (std::size_t i = 0; i < plane; ++i) buf[i] = quantize_value(truth.grid.data[c * plane + i]);
          write_pgm((fs::path(dump_dir) / (std::string("true_") + name + ".pgm")).string(), buf.data(), truth.h(),
                    truth.w());
        }
      }
    }
  }
  return kExitOk;
}

int cmd_check(const std::string& record_dir, bool gradcheck, bool roundtrip, long long seed) {
  bool any = false;
  bool data_fail = false, numeric_fail = false;
  const std::uint64_t s = static_cast<std::uint64_t>(seed < 0 ? 0 : seed);
  if (!record_dir.empty()) {
    any = true;
    auto failures = check_record(record_dir);
    if (failures.empty()) {
      std::cout << "PASS record " << record_dir << "\n";
    } else {
      data_fail = true;
      for (const auto& f : failures) std::cout << "FAIL record " << record_dir << ": " << f << "\n";
    }
  }
  if (roundtrip) {
    any = true;
    const RoundtripResult r = roundtrip_suite(200, s);
    if (r.pass)
      std::cout << "PASS roundtrip mean_mae=" << r.mean_mae << " worst=" << r.worst_mae << "\n";
    else {
      numeric_fail = true;
      std::cout << "FAIL roundtrip mean_mae=" << r.mean_mae << " tol=0.02\n";
    }
  }
  if (gradcheck) {
    any = true;
    ScenarioSpec spec;
    spec.mode = Mode::kUrban;
    spec.grid_h = spec.grid_w = 16;
    spec.meters_per_pixel = 0.5;
    spec.lanes = 2;
    spec.n_agents = 3;
    spec.length = 8;
    spec.seed = s + 17;
    SequenceRecord rec = generate(spec);
    PredictorConfig cfg;
    cfg.grid_h = cfg.grid_w = 16;
    cfg.channels = rec.c;
    cfg.latent_dim = 8;
    cfg.base_channels = 4;
    cfg.input_frames = 3;
    cfg.recon = ReconKind::kCe;
    cfg.lambda_ssim = 0.1;
    const auto report = model_grad_check(rec, cfg, 1, 1e-5, 1e-4, 37, s);
    if (report.pass)
      std::cout << "PASS gradcheck max_rel=" << report.max_rel << "\n";
    else {
      numeric_fail = true;
      std::cout << "FAIL gradcheck " << report.failure << "\n";
    }
  }
  if (!any) throw ConfigError("check needs at least one of --record, --gradcheck, --roundtrip");
  if (data_fail) return kExitData;
  if (numeric_fail) return kExitNumeric;
  return kExitOk;
}

}  // namespace

int cli_run(const std::vector<std::string>& args) {
  CLI::App app{"action-conditional occupancy-grid prediction toolkit"};
  app.require_subcommand(1);

  std::string gen_config, gen_out;
  long long gen_seed = -1;
  int gen_count = 1;
  auto* gen = app.add_subcommand("gen", "generate synthetic traffic sequence records");
  gen->add_option("--config", gen_config, "run configuration file");
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--seed", gen_seed, "seed override");
  gen->add_option("--count", gen_count, "number of sequences");

  std::string train_config, train_data, train_out, train_resume;
  auto* train = app.add_subcommand("train", "train a predictor on a dataset");
  train->add_option("--config", train_config, "run configuration file");
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "output directory (checkpoint, loss curve)")->required();
  train->add_option("--resume", train_resume, "checkpoint to resume from");

  std::string eval_ckpt, eval_stub, eval_config, eval_data, eval_kde, eval_out, eval_suite = "regular";
  std::string eval_horizons = "1,5,10,20", eval_dump;
  long long eval_seed = -1;
  bool eval_sample = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or stub on a dataset");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint or parameter snapshot");
  eval->add_option("--stub", eval_stub, "persistence|oracle baseline instead of a checkpoint");
  eval->add_option("--config", eval_config, "run configuration file (stub geometry, kde size)");
  eval->add_option("--data", eval_data, "evaluation dataset directory")->required();
  eval->add_option("--kde-data", eval_kde, "reference dataset for the log-likelihood metric");
  eval->add_option("--out", eval_out, "report output directory");
  eval->add_option("--horizons", eval_horizons, "comma-separated prediction horizons");
  eval->add_option("--suite", eval_suite, "regular|rare (report label)");
  eval->add_option("--seed", eval_seed, "seed for stochastic rollouts");
  eval->add_flag("--sample", eval_sample, "sample the latent instead of using the prior mean");
  eval->add_option("--dump-frames", eval_dump, "write predicted and target frames as PGM files");

  std::string check_record_dir;
  bool check_grad = false, check_round = false;
  long long check_seed = -1;
  auto* check = app.add_subcommand("check", "run validation and invariant suites");
  check->add_option("--record", check_record_dir, "validate one sequence record directory");
  check->add_flag("--gradcheck", check_grad, "finite-difference check of a small model");
  check->add_flag("--roundtrip", check_round, "geometric roundtrip suite");
  check->add_option("--seed", check_seed, "seed");

  std::vector<const char*> argv;
  argv.push_back("gridcast");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_config, gen_out, gen_seed, gen_count);
    if (train->parsed()) return cmd_train(train_config, train_data, train_out, train_resume);
    if (eval->parsed())
      return cmd_eval(eval_ckpt, eval_stub, eval_config, eval_data, eval_kde, eval_out, eval_horizons, eval_suite,
                      eval_seed, eval_sample, eval_dump);
    if (check->parsed()) return cmd_check(check_record_dir, check_grad, check_round, check_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}

}  // namespace gridcast
