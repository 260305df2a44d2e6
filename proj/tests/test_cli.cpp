// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "gridcast/cli.hpp"
#include "gridcast/pipeline.hpp"
#include "gridcast/worldsim.hpp"

using namespace gridcast;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("gridcast_cli_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string tiny_config_text() {
  return "mode=urban\ngrid_h=16\ngrid_w=16\nsequence_length=10\nn_agents=3\nlanes=2\n"
         "input_frames=3\nlatent_dim=8\nbase_channels=4\ntrain_horizon=2\nbatch_size=2\nepochs=2\n";
}

fs::path write_tiny_config(const fs::path& dir) {
  const fs::path p = dir / "cfg.txt";
  std::ofstream f(p);
  f << tiny_config_text();
  return p;
}

std::map<std::string, std::string> dir_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root).string()] =
        std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  }
  return out;
}

}  // namespace

TEST_CASE("gen with a fixed seed is byte-identical and validates") {
  const auto dir = temp_dir("gen");
  const auto cfg = write_tiny_config(dir);
  CHECK(cli_run({"gen", "--config", cfg.string(), "--out", (dir / "a").string(), "--seed", "7", "--count", "2"}) == 0);
  CHECK(cli_run({"gen", "--config", cfg.string(), "--out", (dir / "b").string(), "--seed", "7", "--count", "2"}) == 0);
  CHECK(dir_bytes(dir / "a") == dir_bytes(dir / "b"));
  CHECK(cli_run({"check", "--record", (dir / "a" / "seq_00000").string()}) == 0);
  CHECK(cli_run({"check", "--record", (dir / "a" / "seq_00001").string()}) == 0);
  // a different seed changes the data
  CHECK(cli_run({"gen", "--config", cfg.string(), "--out", (dir / "c").string(), "--seed", "8", "--count", "2"}) == 0);
  CHECK(dir_bytes(dir / "a") != dir_bytes(dir / "c"));
}

TEST_CASE("urban mode writes binary value_mode manifests") {
  const auto dir = temp_dir("manifest");
  const auto cfg = write_tiny_config(dir);
  REQUIRE(cli_run({"gen", "--config", cfg.string(), "--out", (dir / "d").string(), "--seed", "1", "--count", "1"}) == 0);
  std::ifstream mf(dir / "d" / "seq_00000" / "manifest.txt");
  std::string text((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
  CHECK(text.find("value_mode=binary") != std::string::npos);
  std::ifstream rc(dir / "d" / "config_resolved.txt");
  std::string echoed((std::istreambuf_iterator<char>(rc)), std::istreambuf_iterator<char>());
  CHECK(echoed.find("mode=urban") != std::string::npos);
  CHECK(echoed.find("seed=1") != std::string::npos);
}

TEST_CASE("invalid configs exit with the config code") {
  const auto dir = temp_dir("badcfg");
  const fs::path bad = dir / "bad.txt";
  {
    std::ofstream f(bad);
    f << "mode=flying\n";
  }
  CHECK(cli_run({"gen", "--config", bad.string(), "--out", (dir / "x").string()}) == 2);
  CHECK(cli_run({"gen"}) == 2);                        // missing required --out
  CHECK(cli_run({"eval", "--data", dir.string()}) == 2);  // neither checkpoint nor stub
}

TEST_CASE("corrupted records fail the check with the data code") {
  const auto dir = temp_dir("corrupt");
  const auto cfg = write_tiny_config(dir);
  REQUIRE(cli_run({"gen", "--config", cfg.string(), "--out", (dir / "d").string(), "--seed", "3", "--count", "1"}) == 0);
  {
    std::ofstream f(dir / "d" / "seq_00000" / "frames" / "t00001_c0.pgm", std::ios::binary | std::ios::trunc);
    f << "garbage";
  }
  CHECK(cli_run({"check", "--record", (dir / "d" / "seq_00000").string()}) == 4);
}

TEST_CASE("train smoke run exits cleanly and writes artifacts") {
  const auto dir = temp_dir("train");
  const auto cfg = write_tiny_config(dir);
  REQUIRE(cli_run({"gen", "--config", cfg.string(), "--out", (dir / "d").string(), "--seed", "5", "--count", "4"}) == 0);
  CHECK(cli_run({"train", "--config", cfg.string(), "--data", (dir / "d").string(), "--out", (dir / "run").string()}) ==
        0);
  CHECK(fs::exists(dir / "run" / "checkpoint.ckpt"));
  CHECK(fs::exists(dir / "run" / "model.params"));
  CHECK(fs::exists(dir / "run" / "loss.csv"));
  CHECK(fs::exists(dir / "run" / "config_resolved.txt"));
  std::ifstream csv(dir / "run" / "loss.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "step,epoch,rec,ssim,kl,total");
  // resume continues without error
  CHECK(cli_run({"train", "--config", cfg.string(), "--data", (dir / "d").string(), "--out", (dir / "run2").string(),
                 "--resume", (dir / "run" / "checkpoint.ckpt").string()}) == 0);
}

TEST_CASE("training on non-finite parameters exits with the numeric code") {
  const auto dir = temp_dir("nan");
  const auto cfg = write_tiny_config(dir);
  REQUIRE(cli_run({"gen", "--config", cfg.string(), "--out", (dir / "d").string(), "--seed", "9", "--count", "4"}) == 0);
  auto data = load_dataset((dir / "d").string());
  Trainer tr(load_run_config(cfg.string()), data.front());
  tr.init();
  tr.step(data);
  const int idx = tr.model().param_index("post_enc.mu.b");
  tr.model().params()[static_cast<std::size_t>(idx)].value.front() = std::numeric_limits<float>::quiet_NaN();
  const fs::path poisoned = dir / "poisoned.ckpt";
  tr.save_checkpoint(poisoned.string());
  CHECK(cli_run({"train", "--config", cfg.string(), "--data", (dir / "d").string(), "--out", (dir / "run").string(),
                 "--resume", poisoned.string()}) == 3);
}

TEST_CASE("eval runs with a checkpoint, with stubs, and dumps frames") {
  const auto dir = temp_dir("eval");
  const auto cfg = write_tiny_config(dir);
  REQUIRE(cli_run({"gen", "--config", cfg.string(), "--out", (dir / "d").string(), "--seed", "11", "--count", "3"}) ==
          0);
  REQUIRE(cli_run({"train", "--config", cfg.string(), "--data", (dir / "d").string(), "--out", (dir / "run").string()}) ==
          0);
  CHECK(cli_run({"eval", "--checkpoint", (dir / "run" / "model.params").string(), "--data", (dir / "d").string(),
                 "--horizons", "1,3", "--out", (dir / "rep").string()}) == 0);
  CHECK(fs::exists(dir / "rep" / "report.csv"));
  std::ifstream csv(dir / "rep" / "report.csv");
  std::string text((std::istreambuf_iterator<char>(csv)), std::istreambuf_iterator<char>());
  CHECK(text.find("horizon,metric,mean,spread") == 0);
  CHECK(text.find("3,mse,") != std::string::npos);

  CHECK(cli_run({"eval", "--stub", "persistence", "--config", cfg.string(), "--data", (dir / "d").string(),
                 "--horizons", "1,2"}) == 0);
  CHECK(cli_run({"eval", "--stub", "oracle", "--config", cfg.string(), "--data", (dir / "d").string(), "--horizons",
                 "1,2", "--dump-frames", (dir / "frames").string()}) == 0);
  CHECK(fs::exists(dir / "frames" / "pred_seq000_k01_c0.pgm"));
  CHECK(fs::exists(dir / "frames" / "true_seq000_k02_c1.pgm"));
  // the full checkpoint file also loads for evaluation
  CHECK(cli_run({"eval", "--checkpoint", (dir / "run" / "checkpoint.ckpt").string(), "--data", (dir / "d").string(),
                 "--horizons", "1"}) == 0);
}

TEST_CASE("eval rejects shape-incompatible checkpoints naming both shapes") {
  const auto dir = temp_dir("shapes");
  const auto cfg = write_tiny_config(dir);
  REQUIRE(cli_run({"gen", "--config", cfg.string(), "--out", (dir / "d16").string(), "--seed", "2", "--count", "2"}) ==
          0);
  // train on 16x16 data, then evaluate against 32x32 data
  REQUIRE(cli_run({"train", "--config", cfg.string(), "--data", (dir / "d16").string(), "--out", (dir / "run").string()}) ==
          0);
  const fs::path cfg32 = dir / "cfg32.txt";
  {
    std::ofstream f(cfg32);
    f << tiny_config_text();
    f << "grid_h=32\ngrid_w=32\n";
  }
  REQUIRE(cli_run({"gen", "--config", cfg32.string(), "--out", (dir / "d32").string(), "--seed", "2", "--count", "2"}) ==
          0);
  CHECK(cli_run({"eval", "--checkpoint", (dir / "run" / "model.params").string(), "--data", (dir / "d32").string(),
                 "--horizons", "1"}) == 4);
}

TEST_CASE("gradcheck subcommand passes at the documented tolerance") {
  CHECK(cli_run({"check", "--gradcheck", "--seed", "3"}) == 0);
}
