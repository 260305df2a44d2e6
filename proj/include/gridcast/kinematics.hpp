// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

namespace gridcast {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// Ego position and velocity in the world frame, meters and meters/second.
struct Measurements {
  Vec2 p;
  Vec2 v;
};

// Longitudinal acceleration (m/s^2) and heading-rate command (rad/s).
struct ActionCmd {
  double alpha = 0.0;
  double tau = 0.0;
};

struct ActionBounds {
  double alpha_min = -30.0;
  double alpha_max = 30.0;
  double tau_min = -1.0;
  double tau_max = 1.0;
};

ActionCmd clamp_action(const ActionCmd& a, const ActionBounds& b);

// Per-step ego displacement (world frame, meters) and heading change (rad).
struct PoseDelta {
  Vec2 dp;
  double dtheta = 0.0;
};

struct StepResult {
  Measurements next;
  PoseDelta delta;
  double heading_before = 0.0;
  double heading_after = 0.0;
};

// Unicycle update: speed integrates alpha (clamped at zero, no reverse),
// heading integrates tau, and the displacement uses the post-step heading
// and speed. The previous heading disambiguates theta when speed is zero.
StepResult measurement_step(const Measurements& m, const ActionCmd& a, double dt, double prev_heading = 0.0);

struct InverseActionsResult {
  std::vector<ActionCmd> actions;
  bool zero_speed_start = false;  // first sample had no usable heading
};

// Recovers the action sequence that replays the trajectory through
// measurement_step. Headings at zero-speed samples carry the previous value.
InverseActionsResult inverse_actions(const std::vector<Measurements>& trajectory, double dt);

}  // namespace gridcast
