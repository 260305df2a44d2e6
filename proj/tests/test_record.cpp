// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "gridcast/errors.hpp"
#include "gridcast/record.hpp"
#include "gridcast/run_config.hpp"
#include "gridcast/rng.hpp"
#include "gridcast/worldsim.hpp"

using namespace gridcast;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("gridcast_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SequenceRecord small_record(std::uint64_t seed = 3) {
  ScenarioSpec spec;
  spec.mode = Mode::kUrban;
  spec.grid_h = 32;
  spec.grid_w = 32;
  spec.meters_per_pixel = 0.25;
  spec.length = 8;
  spec.n_agents = 4;
  spec.lanes = 2;
  spec.seed = seed;
  return generate(spec);
}

}  // namespace

TEST_CASE("pgm values survive a write/read round trip exactly") {
  const auto dir = temp_dir("pgm");
  std::vector<std::uint8_t> img(16 * 9);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<std::uint8_t>((i * 37) % 256);
  const std::string path = (dir / "x.pgm").string();
  write_pgm(path, img.data(), 9, 16);
  int h = 0, w = 0;
  auto back = read_pgm(path, h, w);
  CHECK(h == 9);
  CHECK(w == 16);
  CHECK(back == img);
}

TEST_CASE("record directory round trip preserves everything") {
  const auto dir = temp_dir("roundtrip");
  SequenceRecord rec = small_record();
  write_record(rec, (dir / "seq").string());
  SequenceRecord back = read_record((dir / "seq").string());
  CHECK(back.h == rec.h);
  CHECK(back.w == rec.w);
  CHECK(back.c == rec.c);
  CHECK(back.length == rec.length);
  CHECK(back.binary_mode == rec.binary_mode);
  CHECK(back.frames == rec.frames);
  REQUIRE(back.measurements.size() == rec.measurements.size());
  for (std::size_t i = 0; i < rec.measurements.size(); ++i) {
    CHECK(back.measurements[i].p.x == rec.measurements[i].p.x);
    CHECK(back.measurements[i].v.y == rec.measurements[i].v.y);
  }
  REQUIRE(back.actions.size() == rec.actions.size());
  for (std::size_t i = 0; i < rec.actions.size(); ++i) {
    CHECK(back.actions[i].alpha == rec.actions[i].alpha);
    CHECK(back.actions[i].tau == rec.actions[i].tau);
  }
}

TEST_CASE("manifest write-read-write is byte identical") {
  const auto dir = temp_dir("manifest");
  SequenceRecord rec = small_record();
  write_record(rec, (dir / "seq").string());
  std::ifstream f(dir / "seq" / "manifest.txt", std::ios::binary);
  std::string first((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  SequenceRecord back = read_record((dir / "seq").string());
  CHECK(manifest_string(back) == first);
}

TEST_CASE("corrupted pgm fails naming the file") {
  const auto dir = temp_dir("corrupt");
  SequenceRecord rec = small_record();
  write_record(rec, (dir / "seq").string());
  const fs::path victim = dir / "seq" / "frames" / "t00002_c1.pgm";
  {
    std::ofstream f(victim, std::ios::binary | std::ios::trunc);
    f << "P5\n32 32\n255\nshort";
  }
  try {
    read_record((dir / "seq").string());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("t00002_c1.pgm") != std::string::npos);
  }
}

TEST_CASE("validate_record rejects inconsistent row counts") {
  SequenceRecord rec = small_record();
  rec.actions.pop_back();
  CHECK_THROWS_AS(validate_record(rec, "test"), DataError);
}

TEST_CASE("quantization error stays within half a step") {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const float v = static_cast<float>(rng.uniform());
    const float back = dequantize_value(quantize_value(v));
    CHECK(std::abs(back - v) <= 0.5f / 255.0f + 1e-6f);
  }
}

TEST_CASE("run config parses, resolves mode defaults, and echoes itself") {
  RunConfig cfg = parse_run_config_text("mode=urban\nvariant=dl\nseed=42\n");
  CHECK(cfg.mode == Mode::kUrban);
  CHECK(cfg.variant == Variant::kDl);
  RunConfig r = resolved(cfg);
  CHECK(r.meters_per_pixel == doctest::Approx(0.25));
  CHECK(r.lanes == 2);
  CHECK(r.lambda_ssim == doctest::Approx(0.1));
  CHECK(r.recon == ReconMode::kCe);
  // echo parses back to the same resolved config
  RunConfig again = resolved(parse_run_config_text(config_string(r)));
  CHECK(config_string(again) == config_string(r));
}

TEST_CASE("run config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(parse_run_config_text("modee=urban\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text("mode=rural\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text("eta_percent=200\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text("learning_rate=0\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text("grid_h=abc\n"), ConfigError);
}

TEST_CASE("highway defaults resolve differently from urban") {
  RunConfig r = resolved(parse_run_config_text("mode=highway\n"));
  CHECK(r.meters_per_pixel == doctest::Approx(0.5));
  CHECK(r.lanes == 3);
  CHECK(r.lambda_ssim == doctest::Approx(0.05));
  CHECK(r.recon == ReconMode::kMse);
}
