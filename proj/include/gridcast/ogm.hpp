// SPDX-License-Identifier: Apache-2.0
//
// Occupancy grid frames and the deterministic rigid transforms that move
// content between the ego-centered frame and the anticipated-pose frame.
//
// Axis convention: the view is the ego body frame with forward = up
// (increasing forward position decreases the row index) and left = decreasing
// column index. A world point P seen from pose (p, theta) lands at
//   row = anchor_row - x_body / meters_per_pixel
//   col = anchor_col - y_body / meters_per_pixel
// with (x_body, y_body) = R(-theta) (P - p).
#pragma once

#include <string>
#include <vector>

#include "gridcast/autodiff.hpp"
#include "gridcast/kinematics.hpp"

namespace gridcast {

using ad::Interp;
using ad::WarpSpec;

enum class ChannelRole { kMap, kOccupancy, kEgo };

std::string role_name(ChannelRole r);
ChannelRole role_from_name(const std::string& s);

// Shaped value buffer without occupancy-range semantics (difference frames
// live in [-1, 1]).
struct Grid {
  int h = 0, w = 0, c = 0;
  std::vector<float> data;  // channel-major [c][h][w]

  float at(int ch, int row, int col) const { return data[(static_cast<std::size_t>(ch) * h + row) * w + col]; }
  float& at(int ch, int row, int col) { return data[(static_cast<std::size_t>(ch) * h + row) * w + col]; }
  bool same_shape(const Grid& o) const { return h == o.h && w == o.w && c == o.c; }
};

Grid make_grid(int h, int w, int c);

// One occupancy frame: values in [0, 1], ego reference pixel, physical scale.
struct Ogm {
  Grid grid;
  double ego_anchor_row = 0.0;
  double ego_anchor_col = 0.0;
  double meters_per_pixel = 0.25;
  bool binary_mode = false;
  std::vector<ChannelRole> roles;

  int h() const { return grid.h; }
  int w() const { return grid.w; }
  int c() const { return grid.c; }
  int ego_channel() const;         // -1 if none
  std::vector<bool> ego_mask() const;
};

// Throws when an invariant is broken (range, anchor inside grid, scale > 0).
void validate(const Ogm& frame, const std::string& context);

// Pixel-space warp parameters for a pose delta. `heading_before` is the ego
// heading at the source frame's timestamp.
WarpSpec warp_spec_from_delta(const PoseDelta& d, double heading_before, const Ogm& frame);

// Rigid warp of the selected channels (empty mask = all); unselected channels
// copy through. Output clipped to [0, 1].
Ogm warp(const Ogm& src, const WarpSpec& spec, const std::vector<bool>& mask, Interp interp, bool inverse = false);

// Moves only the ego channel to the anticipated pose; throws without one.
Ogm iot1(const Ogm& frame, const WarpSpec& spec, Interp interp);

// Aligns the whole target frame to the anticipated pose (same spec as iot1).
Ogm iot2(const Ogm& next_frame, const WarpSpec& spec, Interp interp);

// Undoes iot2: re-centers a prediction on the ego so it can be fed back.
Ogm oot(const Ogm& pred, const WarpSpec& spec, Interp interp);

Ogm pad(const Ogm& src, int pixels);
Ogm crop(const Ogm& src, int pixels);

// a - b, elementwise, no clipping.
Grid frame_diff(const Ogm& a, const Ogm& b);

double mass(const Grid& g, int channel);
// Mass centroid (row, col) of one channel; returns false when the channel is empty.
bool centroid(const Grid& g, int channel, double& row, double& col);

// Axis-aligned rectangle stamp centered at (center_row, center_col) with pixel
// extents (ext_rows, ext_cols). Real mode writes exact per-pixel coverage
// (combined with the existing value by max); binary mode sets pixels whose
// coverage is at least one half.
void stamp_rect(Grid& g, int channel, double center_row, double center_col, double ext_rows, double ext_cols,
                bool binary);

// Canonical ego footprint at the anchor pixel. Every ego-centered frame
// carries this exact stamp, which is what makes the re-centered prediction's
// ego channel reproducible bit for bit.
void stamp_ego(Ogm& frame, double len_px, double wid_px);

}  // namespace gridcast
