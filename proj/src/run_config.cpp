// SPDX-License-Identifier: Apache-2.0
#include "gridcast/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "gridcast/errors.hpp"

namespace gridcast {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double to_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse number '" + v + "'");
  }
}

int to_int(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse integer '" + v + "'");
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "0" || v == "false") return false;
  if (v == "1" || v == "true") return true;
  throw ConfigError("config key '" + key + "': expected 0/1, got '" + v + "'");
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "mode") {
      if (val == "highway") cfg.mode = Mode::kHighway;
      else if (val == "urban") cfg.mode = Mode::kUrban;
      else throw ConfigError("mode must be highway or urban, got '" + val + "'");
    } else if (key == "grid_h") cfg.grid_h = to_int(val, key);
    else if (key == "grid_w") cfg.grid_w = to_int(val, key);
    else if (key == "meters_per_pixel") cfg.meters_per_pixel = to_double(val, key);
    else if (key == "dt") cfg.dt = to_double(val, key);
    else if (key == "sequence_length") cfg.sequence_length = to_int(val, key);
    else if (key == "n_agents") cfg.n_agents = to_int(val, key);
    else if (key == "lanes") cfg.lanes = to_int(val, key);
    else if (key == "action_policy") {
      if (val == "recorded") cfg.action_policy = ActionPolicy::kRecorded;
      else if (val == "scripted") cfg.action_policy = ActionPolicy::kScripted;
      else if (val == "rare-sample") cfg.action_policy = ActionPolicy::kRareSample;
      else throw ConfigError("action_policy must be recorded|scripted|rare-sample, got '" + val + "'");
    } else if (key == "rare_kind") {
      if (val == "tail") cfg.rare_kind = RareKind::kTail;
      else if (val == "brake") cfg.rare_kind = RareKind::kBrake;
      else if (val == "steer") cfg.rare_kind = RareKind::kSteer;
      else throw ConfigError("rare_kind must be tail|brake|steer, got '" + val + "'");
    } else if (key == "scripted_brake_start") cfg.scripted_brake_start = to_int(val, key);
    else if (key == "scripted_brake_len") cfg.scripted_brake_len = to_int(val, key);
    else if (key == "scripted_alpha") cfg.scripted_alpha = to_double(val, key);
    else if (key == "seed") cfg.seed = static_cast<unsigned long long>(std::stoull(val));
    else if (key == "variant") {
      if (val == "base") cfg.variant = Variant::kBase;
      else if (val == "dl") cfg.variant = Variant::kDl;
      else throw ConfigError("variant must be base or dl, got '" + val + "'");
    } else if (key == "latent_dim") cfg.latent_dim = to_int(val, key);
    else if (key == "base_channels") cfg.base_channels = to_int(val, key);
    else if (key == "input_frames") cfg.input_frames = to_int(val, key);
    else if (key == "train_horizon") cfg.train_horizon = to_int(val, key);
    else if (key == "epochs") cfg.epochs = to_int(val, key);
    else if (key == "batch_size") cfg.batch_size = to_int(val, key);
    else if (key == "learning_rate") cfg.learning_rate = to_double(val, key);
    else if (key == "lambda_ssim") cfg.lambda_ssim = to_double(val, key);
    else if (key == "eta_percent") cfg.eta_percent = to_double(val, key);
    else if (key == "epsilon_motion") cfg.epsilon_motion = to_double(val, key);
    else if (key == "no_rbm") cfg.no_rbm = to_bool(val, key);
    else if (key == "no_bcde") cfg.no_bcde = to_bool(val, key);
    else if (key == "no_me") cfg.no_me = to_bool(val, key);
    else if (key == "recon") {
      if (val == "auto") cfg.recon = ReconMode::kAuto;
      else if (val == "mse") cfg.recon = ReconMode::kMse;
      else if (val == "ce") cfg.recon = ReconMode::kCe;
      else throw ConfigError("recon must be auto|mse|ce, got '" + val + "'");
    } else if (key == "warp_interp") {
      if (val == "bilinear") cfg.warp_interp = WarpInterp::kBilinear;
      else if (val == "nearest") cfg.warp_interp = WarpInterp::kNearest;
      else throw ConfigError("warp_interp must be bilinear or nearest, got '" + val + "'");
    } else if (key == "checkpoint_every") cfg.checkpoint_every = to_int(val, key);
    else if (key == "kde_refs") cfg.kde_refs = to_int(val, key);
    else if (key == "ego_len_px") cfg.ego_len_px = to_double(val, key);
    else if (key == "ego_wid_px") cfg.ego_wid_px = to_double(val, key);
    else throw ConfigError("unknown config key '" + key + "'");
  }

  if (cfg.grid_h < 8 || cfg.grid_w < 8) throw ConfigError("grid extents must be at least 8");
  if (cfg.sequence_length < 2) throw ConfigError("sequence_length must be at least 2");
  if (cfg.input_frames < 1) throw ConfigError("input_frames must be at least 1");
  if (cfg.train_horizon < 1) throw ConfigError("train_horizon must be at least 1");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (cfg.eta_percent < 0.0 || cfg.eta_percent > 100.0) throw ConfigError("eta_percent must be within [0,100]");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (cfg.latent_dim < 1) throw ConfigError("latent_dim must be at least 1");
  if (cfg.n_agents < 1) throw ConfigError("n_agents must be at least 1");
  if (!(cfg.dt > 0.0)) throw ConfigError("dt must be positive");
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return parse_run_config_text(os.str());
}

RunConfig resolved(RunConfig cfg) {
  if (cfg.meters_per_pixel <= 0.0) cfg.meters_per_pixel = cfg.mode == Mode::kHighway ? 0.5 : 0.25;
  if (cfg.lanes <= 0) cfg.lanes = cfg.mode == Mode::kHighway ? 3 : 2;
  if (cfg.lambda_ssim < 0.0) cfg.lambda_ssim = cfg.binary_mode() ? 0.1 : 0.05;
  if (cfg.recon == ReconMode::kAuto) cfg.recon = cfg.binary_mode() ? ReconMode::kCe : ReconMode::kMse;
  return cfg;
}

std::string config_string(const RunConfig& cfg) {
  std::ostringstream os;
  os << "mode=" << (cfg.mode == Mode::kHighway ? "highway" : "urban") << "\n";
  os << "grid_h=" << cfg.grid_h << "\n";
  os << "grid_w=" << cfg.grid_w << "\n";
  os << "meters_per_pixel=" << fmt_double(cfg.meters_per_pixel) << "\n";
  os << "dt=" << fmt_double(cfg.dt) << "\n";
  os << "sequence_length=" << cfg.sequence_length << "\n";
  os << "n_agents=" << cfg.n_agents << "\n";
  os << "lanes=" << cfg.lanes << "\n";
  os << "action_policy=";
  switch (cfg.action_policy) {
    case ActionPolicy::kRecorded: os << "recorded"; break;
    case ActionPolicy::kScripted: os << "scripted"; break;
    case ActionPolicy::kRareSample: os << "rare-sample"; break;
  }
  os << "\n";
  os << "rare_kind=" << (cfg.rare_kind == RareKind::kTail ? "tail" : cfg.rare_kind == RareKind::kBrake ? "brake" : "steer")
     << "\n";
  os << "scripted_brake_start=" << cfg.scripted_brake_start << "\n";
  os << "scripted_brake_len=" << cfg.scripted_brake_len << "\n";
  os << "scripted_alpha=" << fmt_double(cfg.scripted_alpha) << "\n";
  os << "seed=" << cfg.seed << "\n";
  os << "variant=" << (cfg.variant == Variant::kBase ? "base" : "dl") << "\n";
  os << "latent_dim=" << cfg.latent_dim << "\n";
  os << "base_channels=" << cfg.base_channels << "\n";
  os << "input_frames=" << cfg.input_frames << "\n";
  os << "train_horizon=" << cfg.train_horizon << "\n";
  os << "epochs=" << cfg.epochs << "\n";
  os << "batch_size=" << cfg.batch_size << "\n";
  os << "learning_rate=" << fmt_double(cfg.learning_rate) << "\n";
  os << "lambda_ssim=" << fmt_double(cfg.lambda_ssim) << "\n";
  os << "eta_percent=" << fmt_double(cfg.eta_percent) << "\n";
  os << "epsilon_motion=" << fmt_double(cfg.epsilon_motion) << "\n";
  os << "no_rbm=" << (cfg.no_rbm ? 1 : 0) << "\n";
  os << "no_bcde=" << (cfg.no_bcde ? 1 : 0) << "\n";
  os << "no_me=" << (cfg.no_me ? 1 : 0) << "\n";
  os << "recon=" << (cfg.recon == ReconMode::kAuto ? "auto" : cfg.recon == ReconMode::kMse ? "mse" : "ce") << "\n";
  os << "warp_interp=" << (cfg.warp_interp == WarpInterp::kBilinear ? "bilinear" : "nearest") << "\n";
  os << "checkpoint_every=" << cfg.checkpoint_every << "\n";
  os << "kde_refs=" << cfg.kde_refs << "\n";
  os << "ego_len_px=" << fmt_double(cfg.ego_len_px) << "\n";
  os << "ego_wid_px=" << fmt_double(cfg.ego_wid_px) << "\n";
  return os.str();
}

void write_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write config to " + path);
  f << config_string(cfg);
}

}  // namespace gridcast
