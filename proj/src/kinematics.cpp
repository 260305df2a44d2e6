// SPDX-License-Identifier: Apache-2.0
#include "gridcast/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gridcast {

namespace {

bool finite(const Vec2& v) { return std::isfinite(v.x) && std::isfinite(v.y); }

double wrap_angle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a < -M_PI) a += 2.0 * M_PI;
  return a;
}

}  // namespace

ActionCmd clamp_action(const ActionCmd& a, const ActionBounds& b) {
  return {std::clamp(a.alpha, b.alpha_min, b.alpha_max), std::clamp(a.tau, b.tau_min, b.tau_max)};
}

StepResult measurement_step(const Measurements& m, const ActionCmd& a, double dt, double prev_heading) {
  if (!(dt > 0.0)) throw std::invalid_argument("measurement_step: dt must be positive");
  if (!finite(m.p) || !finite(m.v) || !std::isfinite(a.alpha) || !std::isfinite(a.tau) || !std::isfinite(prev_heading))
    throw std::invalid_argument("measurement_step: non-finite input");

  const double s = std::hypot(m.v.x, m.v.y);
  const double theta = s > 0.0 ? std::atan2(m.v.y, m.v.x) : prev_heading;
  const double s_next = std::max(0.0, s + a.alpha * dt);
  const double dtheta = a.tau * dt;
  const double theta_next = theta + dtheta;

  StepResult r;
  r.heading_before = theta;
  r.heading_after = theta_next;
  r.delta.dtheta = dtheta;
  r.delta.dp = {s_next * dt * std::cos(theta_next), s_next * dt * std::sin(theta_next)};
  r.next.p = {m.p.x + r.delta.dp.x, m.p.y + r.delta.dp.y};
  r.next.v = {s_next * std::cos(theta_next), s_next * std::sin(theta_next)};
  return r;
}

InverseActionsResult inverse_actions(const std::vector<Measurements>& trajectory, double dt) {
  if (trajectory.size() < 2) throw std::invalid_argument("inverse_actions: trajectory length must be >= 2");
  if (!(dt > 0.0)) throw std::invalid_argument("inverse_actions: dt must be positive");

  InverseActionsResult out;
  double heading = 0.0;
  {
    const Vec2 v0 = trajectory.front().v;
    const double s0 = std::hypot(v0.x, v0.y);
    if (s0 > 0.0) {
      heading = std::atan2(v0.y, v0.x);
    } else {
      out.zero_speed_start = true;
    }
  }
  out.actions.reserve(trajectory.size() - 1);
  for (std::size_t i = 0; i + 1 < trajectory.size(); ++i) {
    const double s = std::hypot(trajectory[i].v.x, trajectory[i].v.y);
    const Vec2 vn = trajectory[i + 1].v;
    const double s_next = std::hypot(vn.x, vn.y);
    const double heading_next = s_next > 0.0 ? std::atan2(vn.y, vn.x) : heading;
    ActionCmd a;
    a.alpha = (s_next - s) / dt;
    a.tau = wrap_angle(heading_next - heading) / dt;
    out.actions.push_back(a);
    heading = heading_next;
  }
  return out;
}

}  // namespace gridcast
