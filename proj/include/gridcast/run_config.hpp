// SPDX-License-Identifier: Apache-2.0
//
// Line-based key=value configuration shared by the CLI tools. Unknown keys
// are rejected; tools echo back the fully resolved configuration they ran
// with.
#pragma once

#include <string>

namespace gridcast {

enum class Mode { kHighway, kUrban };
enum class ActionPolicy { kRecorded, kScripted, kRareSample };
enum class RareKind { kTail, kBrake, kSteer };
enum class Variant { kBase, kDl };
enum class ReconMode { kAuto, kMse, kCe };
enum class WarpInterp { kBilinear, kNearest };

struct RunConfig {
  // scenario
  Mode mode = Mode::kHighway;
  int grid_h = 64;
  int grid_w = 64;
  double meters_per_pixel = -1.0;  // resolved by mode when negative
  double dt = 0.1;
  int sequence_length = 40;
  int n_agents = 8;
  int lanes = -1;  // resolved by mode when negative
  ActionPolicy action_policy = ActionPolicy::kRecorded;
  RareKind rare_kind = RareKind::kBrake;
  int scripted_brake_start = 14;
  int scripted_brake_len = 12;
  double scripted_alpha = -6.0;
  unsigned long long seed = 0;

  // model / training
  Variant variant = Variant::kBase;
  int latent_dim = 32;
  int base_channels = 8;
  int input_frames = 10;
  int train_horizon = 5;
  int epochs = 10;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double lambda_ssim = -1.0;  // resolved by mode when negative
  double eta_percent = 10.0;
  double epsilon_motion = 0.5;
  bool no_rbm = false;
  bool no_bcde = false;
  bool no_me = false;
  ReconMode recon = ReconMode::kAuto;
  WarpInterp warp_interp = WarpInterp::kBilinear;
  int checkpoint_every = 200;
  int kde_refs = 2000;
  double ego_len_px = 9.0;
  double ego_wid_px = 4.0;

  bool binary_mode() const { return mode == Mode::kUrban; }
};

// Parses and validates; throws ConfigError on unknown keys or bad values.
RunConfig parse_run_config_text(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Fills every mode-dependent default so the echo is fully explicit.
RunConfig resolved(RunConfig cfg);

// Deterministic full echo, parseable by parse_run_config_text.
std::string config_string(const RunConfig& cfg);

void write_config(const RunConfig& cfg, const std::string& path);

}  // namespace gridcast
