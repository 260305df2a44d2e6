// SPDX-License-Identifier: Apache-2.0
#include "gridcast/ogm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gridcast {

std::string role_name(ChannelRole r) {
  switch (r) {
    case ChannelRole::kMap: return "map";
    case ChannelRole::kOccupancy: return "occupancy";
    case ChannelRole::kEgo: return "ego";
  }
  return "?";
}

ChannelRole role_from_name(const std::string& s) {
  if (s == "map") return ChannelRole::kMap;
  if (s == "occupancy") return ChannelRole::kOccupancy;
  if (s == "ego") return ChannelRole::kEgo;
  throw std::invalid_argument("unknown channel role: " + s);
}

Grid make_grid(int h, int w, int c) {
  Grid g;
  g.h = h;
  g.w = w;
  g.c = c;
  g.data.assign(static_cast<std::size_t>(h) * w * c, 0.0f);
  return g;
}

int Ogm::ego_channel() const {
  for (std::size_t i = 0; i < roles.size(); ++i)
    if (roles[i] == ChannelRole::kEgo) return static_cast<int>(i);
  return -1;
}

std::vector<bool> Ogm::ego_mask() const {
  std::vector<bool> m(roles.size(), false);
  for (std::size_t i = 0; i < roles.size(); ++i) m[i] = roles[i] == ChannelRole::kEgo;
  return m;
}

void validate(const Ogm& frame, const std::string& context) {
  if (frame.grid.h <= 0 || frame.grid.w <= 0 || frame.grid.c <= 0)
    throw std::invalid_argument(context + ": empty grid");
  if (frame.grid.data.size() != static_cast<std::size_t>(frame.grid.h) * frame.grid.w * frame.grid.c)
    throw std::invalid_argument(context + ": data length does not match extents");
  if (!(frame.meters_per_pixel > 0.0)) throw std::invalid_argument(context + ": meters_per_pixel must be positive");
  if (frame.ego_anchor_row < 0 || frame.ego_anchor_row > frame.grid.h - 1 || frame.ego_anchor_col < 0 ||
      frame.ego_anchor_col > frame.grid.w - 1)
    throw std::invalid_argument(context + ": ego anchor outside grid");
  if (static_cast<int>(frame.roles.size()) != frame.grid.c)
    throw std::invalid_argument(context + ": channel role count != channel count");
  for (float v : frame.grid.data) {
    if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument(context + ": value outside [0,1]");
  }
}

WarpSpec warp_spec_from_delta(const PoseDelta& d, double heading_before, const Ogm& frame) {
  const double c = std::cos(-heading_before), s = std::sin(-heading_before);
  const double bx = c * d.dp.x - s * d.dp.y;  // body-frame displacement, forward
  const double by = s * d.dp.x + c * d.dp.y;  // body-frame displacement, left
  WarpSpec spec;
  spec.dtheta = d.dtheta;
  spec.dp_row = -bx / frame.meters_per_pixel;
  spec.dp_col = -by / frame.meters_per_pixel;
  spec.pivot_row = frame.ego_anchor_row;
  spec.pivot_col = frame.ego_anchor_col;
  return spec;
}

Ogm warp(const Ogm& src, const WarpSpec& spec, const std::vector<bool>& mask, Interp interp, bool inverse) {
  if (!mask.empty() && static_cast<int>(mask.size()) != src.grid.c)
    throw std::invalid_argument("warp: channel mask length != channel count");
  Ogm out = src;
  const ad::detail::WarpSampler map = ad::detail::WarpSampler::make(spec, inverse);
  const int H = src.grid.h, W = src.grid.w;
  for (int ch = 0; ch < src.grid.c; ++ch) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(ch)]) continue;
    const std::size_t base = static_cast<std::size_t>(ch) * H * W;
    ad::detail::warp_plane(src.grid.data.data() + base, H, W, map, interp, out.grid.data.data() + base);
  }
  for (float& v : out.grid.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

Ogm iot1(const Ogm& frame, const WarpSpec& spec, Interp interp) {
  if (frame.ego_channel() < 0) throw std::invalid_argument("iot1: frame has no ego channel");
  return warp(frame, spec, frame.ego_mask(), interp, false);
}

Ogm iot2(const Ogm& next_frame, const WarpSpec& spec, Interp interp) {
  return warp(next_frame, spec, {}, interp, false);
}

Ogm oot(const Ogm& pred, const WarpSpec& spec, Interp interp) {
  return warp(pred, spec, {}, interp, true);
}

Ogm pad(const Ogm& src, int pixels) {
  if (pixels < 0) throw std::invalid_argument("pad: negative padding");
  Ogm out = src;
  out.grid = make_grid(src.grid.h + 2 * pixels, src.grid.w + 2 * pixels, src.grid.c);
  out.ego_anchor_row = src.ego_anchor_row + pixels;
  out.ego_anchor_col = src.ego_anchor_col + pixels;
  for (int ch = 0; ch < src.grid.c; ++ch)
    for (int i = 0; i < src.grid.h; ++i)
      for (int j = 0; j < src.grid.w; ++j) out.grid.at(ch, i + pixels, j + pixels) = src.grid.at(ch, i, j);
  return out;
}

Ogm crop(const Ogm& src, int pixels) {
  if (pixels < 0) throw std::invalid_argument("crop: negative crop");
  if (src.grid.h <= 2 * pixels || src.grid.w <= 2 * pixels) throw std::invalid_argument("crop: crop exceeds extent");
  Ogm out = src;
  out.grid = make_grid(src.grid.h - 2 * pixels, src.grid.w - 2 * pixels, src.grid.c);
  out.ego_anchor_row = src.ego_anchor_row - pixels;
  out.ego_anchor_col = src.ego_anchor_col - pixels;
  for (int ch = 0; ch < out.grid.c; ++ch)
    for (int i = 0; i < out.grid.h; ++i)
      for (int j = 0; j < out.grid.w; ++j) out.grid.at(ch, i, j) = src.grid.at(ch, i + pixels, j + pixels);
  return out;
}

Grid frame_diff(const Ogm& a, const Ogm& b) {
  if (!a.grid.same_shape(b.grid))
    throw std::invalid_argument("frame_diff: shape mismatch " + std::to_string(a.grid.h) + "x" +
                                std::to_string(a.grid.w) + "x" + std::to_string(a.grid.c) + " vs " +
                                std::to_string(b.grid.h) + "x" + std::to_string(b.grid.w) + "x" +
                                std::to_string(b.grid.c));
  Grid out = a.grid;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.grid.data[i] - b.grid.data[i];
  return out;
}

double mass(const Grid& g, int channel) {
  double acc = 0.0;
  const std::size_t base = static_cast<std::size_t>(channel) * g.h * g.w;
  for (int i = 0; i < g.h * g.w; ++i) acc += g.data[base + i];
  return acc;
}

bool centroid(const Grid& g, int channel, double& row, double& col) {
  double m = 0.0, mr = 0.0, mc = 0.0;
  for (int i = 0; i < g.h; ++i)
    for (int j = 0; j < g.w; ++j) {
      const double v = g.at(channel, i, j);
      m += v;
      mr += v * i;
      mc += v * j;
    }
  if (m <= 0.0) return false;
  row = mr / m;
  col = mc / m;
  return true;
}

void stamp_rect(Grid& g, int channel, double center_row, double center_col, double ext_rows, double ext_cols,
                bool binary) {
  const double r0 = center_row - ext_rows / 2.0, r1 = center_row + ext_rows / 2.0;
  const double c0 = center_col - ext_cols / 2.0, c1 = center_col + ext_cols / 2.0;
  const int ri0 = std::max(0, static_cast<int>(std::floor(r0 - 0.5)));
  const int ri1 = std::min(g.h - 1, static_cast<int>(std::ceil(r1 + 0.5)));
  const int ci0 = std::max(0, static_cast<int>(std::floor(c0 - 0.5)));
  const int ci1 = std::min(g.w - 1, static_cast<int>(std::ceil(c1 + 0.5)));
  for (int i = ri0; i <= ri1; ++i) {
    const double cov_r = std::max(0.0, std::min(r1, i + 0.5) - std::max(r0, i - 0.5));
    if (cov_r <= 0.0) continue;
    for (int j = ci0; j <= ci1; ++j) {
      const double cov_c = std::max(0.0, std::min(c1, j + 0.5) - std::max(c0, j - 0.5));
      if (cov_c <= 0.0) continue;
      const double cov = cov_r * cov_c;
      float& v = g.at(channel, i, j);
      if (binary) {
        if (cov >= 0.5) v = 1.0f;
      } else {
        v = std::max(v, static_cast<float>(cov));
      }
    }
  }
}

void stamp_ego(Ogm& frame, double len_px, double wid_px) {
  const int ego = frame.ego_channel();
  if (ego < 0) throw std::invalid_argument("stamp_ego: frame has no ego channel");
  const std::size_t base = static_cast<std::size_t>(ego) * frame.grid.h * frame.grid.w;
  std::fill(frame.grid.data.begin() + base, frame.grid.data.begin() + base + frame.grid.h * frame.grid.w, 0.0f);
  stamp_rect(frame.grid, ego, frame.ego_anchor_row, frame.ego_anchor_col, len_px, wid_px, frame.binary_mode);
}

}  // namespace gridcast
