// SPDX-License-Identifier: Apache-2.0
#include "gridcast/predictor.hpp"

#include <cstdio>
#include <sstream>

#include "gridcast/errors.hpp"

namespace gridcast {

namespace {

bool power_of_two(int x) { return x > 0 && (x & (x - 1)) == 0; }

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Topology derive_topology(const PredictorConfig& cfg) {
  if (cfg.grid_h != cfg.grid_w) throw ConfigError("predictor grids must be square, got " + std::to_string(cfg.grid_h) +
                                                  "x" + std::to_string(cfg.grid_w));
  if (!power_of_two(cfg.grid_h) || cfg.grid_h < 16)
    throw ConfigError("predictor grid extent must be a power of two >= 16, got " + std::to_string(cfg.grid_h));
  if (cfg.input_frames < 2) throw ConfigError("input_frames must be at least 2 for motion encoding");
  Topology topo;
  topo.seed_hw = cfg.grid_h >= 32 ? 8 : 4;
  topo.levels = 0;
  for (int s = cfg.grid_h; s > topo.seed_hw; s /= 2) ++topo.levels;
  topo.enc_channels.clear();
  for (int l = 0; l < topo.levels; ++l)
    topo.enc_channels.push_back(std::min(cfg.base_channels << l, cfg.base_channels * 8));
  topo.trunk_dim = cfg.base_channels * 8;
  topo.ego_dim = cfg.base_channels * 4;
  topo.meas_dim = cfg.base_channels * 2;
  topo.shared_dim = topo.trunk_dim + topo.ego_dim + topo.meas_dim;
  topo.code_dim = topo.shared_dim + 2 * cfg.latent_dim;
  topo.dec_fc1 = 2 * topo.trunk_dim;
  return topo;
}

GeomSpec geom_from_record(const SequenceRecord& rec) {
  GeomSpec g;
  g.h = rec.h;
  g.w = rec.w;
  g.c = rec.c;
  g.meters_per_pixel = rec.meters_per_pixel;
  g.dt = rec.dt;
  g.anchor_row = rec.ego_anchor_row;
  g.anchor_col = rec.ego_anchor_col;
  g.binary = rec.binary_mode;
  g.roles = rec.roles;
  return g;
}

std::vector<bool> ego_mask_for(const GeomSpec& geom) {
  std::vector<bool> mask(geom.roles.size(), false);
  bool any = false;
  for (std::size_t i = 0; i < geom.roles.size(); ++i) {
    if (geom.roles[i] == ChannelRole::kEgo) {
      mask[i] = true;
      any = true;
    }
  }
  if (!any) throw DataError("frame has no ego channel");
  return mask;
}

Grid canonical_ego_channel(const GeomSpec& geom, double ego_len_px, double ego_wid_px) {
  Grid g = make_grid(geom.h, geom.w, 1);
  stamp_rect(g, 0, geom.anchor_row, geom.anchor_col, ego_len_px, ego_wid_px, geom.binary);
  return g;
}

PredictorConfig predictor_config_from_run(const RunConfig& raw, const SequenceRecord& sample) {
  const RunConfig run = resolved(raw);
  PredictorConfig cfg;
  cfg.variant = run.variant;
  cfg.grid_h = sample.h;
  cfg.grid_w = sample.w;
  cfg.channels = sample.c;
  cfg.latent_dim = run.latent_dim;
  cfg.base_channels = run.base_channels;
  cfg.input_frames = run.input_frames;
  cfg.eta_percent = run.eta_percent;
  cfg.epsilon_motion = run.epsilon_motion;
  cfg.lambda_ssim = run.lambda_ssim >= 0.0 ? run.lambda_ssim : (sample.binary_mode ? 0.1 : 0.05);
  cfg.recon = run.recon == ReconMode::kCe || (run.recon == ReconMode::kAuto && sample.binary_mode) ? ReconKind::kCe
                                                                                                   : ReconKind::kMse;
  cfg.no_rbm = run.no_rbm;
  cfg.no_bcde = run.no_bcde;
  cfg.no_me = run.no_me;
  cfg.warp_interp = run.warp_interp == WarpInterp::kNearest ? Interp::kNearest : Interp::kBilinear;
  cfg.ego_len_px = run.ego_len_px;
  cfg.ego_wid_px = run.ego_wid_px;
  return cfg;
}

std::string predictor_config_string(const PredictorConfig& cfg) {
  std::ostringstream os;
  os << "variant=" << (cfg.variant == Variant::kBase ? "base" : "dl") << "\n";
  os << "grid_h=" << cfg.grid_h << "\n";
  os << "grid_w=" << cfg.grid_w << "\n";
  os << "channels=" << cfg.channels << "\n";
  os << "latent_dim=" << cfg.latent_dim << "\n";
  os << "base_channels=" << cfg.base_channels << "\n";
  os << "input_frames=" << cfg.input_frames << "\n";
  os << "eta_percent=" << fmt_double(cfg.eta_percent) << "\n";
  os << "epsilon_motion=" << fmt_double(cfg.epsilon_motion) << "\n";
  os << "lambda_ssim=" << fmt_double(cfg.lambda_ssim) << "\n";
  os << "recon=" << (cfg.recon == ReconKind::kMse ? "mse" : "ce") << "\n";
  os << "no_rbm=" << (cfg.no_rbm ? 1 : 0) << "\n";
  os << "no_bcde=" << (cfg.no_bcde ? 1 : 0) << "\n";
  os << "no_me=" << (cfg.no_me ? 1 : 0) << "\n";
  os << "warp_interp=" << (cfg.warp_interp == Interp::kBilinear ? "bilinear" : "nearest") << "\n";
  os << "ego_len_px=" << fmt_double(cfg.ego_len_px) << "\n";
  os << "ego_wid_px=" << fmt_double(cfg.ego_wid_px) << "\n";
  return os.str();
}

PredictorConfig parse_predictor_config(const std::string& text) {
  PredictorConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("bad predictor config line: " + line);
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "variant") cfg.variant = val == "dl" ? Variant::kDl : Variant::kBase;
    else if (key == "grid_h") cfg.grid_h = std::stoi(val);
    else if (key == "grid_w") cfg.grid_w = std::stoi(val);
    else if (key == "channels") cfg.channels = std::stoi(val);
    else if (key == "latent_dim") cfg.latent_dim = std::stoi(val);
    else if (key == "base_channels") cfg.base_channels = std::stoi(val);
    else if (key == "input_frames") cfg.input_frames = std::stoi(val);
    else if (key == "eta_percent") cfg.eta_percent = std::stod(val);
    else if (key == "epsilon_motion") cfg.epsilon_motion = std::stod(val);
    else if (key == "lambda_ssim") cfg.lambda_ssim = std::stod(val);
    else if (key == "recon") cfg.recon = val == "ce" ? ReconKind::kCe : ReconKind::kMse;
    else if (key == "no_rbm") cfg.no_rbm = val == "1";
    else if (key == "no_bcde") cfg.no_bcde = val == "1";
    else if (key == "no_me") cfg.no_me = val == "1";
    else if (key == "warp_interp") cfg.warp_interp = val == "nearest" ? Interp::kNearest : Interp::kBilinear;
    else if (key == "ego_len_px") cfg.ego_len_px = std::stod(val);
    else if (key == "ego_wid_px") cfg.ego_wid_px = std::stod(val);
    else throw DataError("unknown predictor config key: " + key);
  }
  return cfg;
}

}  // namespace gridcast
