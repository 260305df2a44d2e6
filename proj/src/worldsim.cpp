// SPDX-License-Identifier: Apache-2.0
#include "gridcast/worldsim.hpp"

#include <algorithm>
#include <cmath>

#include "gridcast/errors.hpp"

namespace gridcast {

namespace {

struct Rect {
  double x0, x1, y0, y1;
  bool overlaps(const Rect& o) const { return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1; }
};

Rect agent_rect(const Agent& a) {
  return {a.x - a.length / 2, a.x + a.length / 2, a.y - a.width / 2, a.y + a.width / 2};
}

Rect obstacle_rect(const ObstacleRect& o) {
  return {o.cx - o.len / 2, o.cx + o.len / 2, o.cy - o.wid / 2, o.cy + o.wid / 2};
}

int nearest_lane(const WorldState& s, double y) {
  int best = 0;
  double best_d = 1e18;
  for (int l = 0; l < s.lane_count; ++l) {
    const double d = std::abs(y - s.lane_center(l));
    if (d < best_d) {
      best_d = d;
      best = l;
    }
  }
  return best;
}

// Nearest agent ahead in the given lane; returns -1 when the lane is clear.
int leader_of(const WorldState& s, std::size_t idx) {
  const Agent& a = s.agents[idx];
  const int lane = static_cast<int>(idx) == s.ego_index ? nearest_lane(s, a.y) : a.lane;
  int best = -1;
  double best_x = 1e18;
  for (std::size_t j = 0; j < s.agents.size(); ++j) {
    if (j == idx) continue;
    const Agent& b = s.agents[j];
    const int blane = static_cast<int>(j) == s.ego_index ? nearest_lane(s, b.y) : b.lane;
    if (blane != lane || b.x <= a.x) continue;
    if (b.x < best_x) {
      best_x = b.x;
      best = static_cast<int>(j);
    }
  }
  return best;
}

double follower_accel(const WorldState& s, std::size_t idx) {
  const Agent& a = s.agents[idx];
  const BehaviorParams& p = a.behavior;
  double accel = p.k_v * (p.v_des - a.speed);
  const int lead = leader_of(s, idx);
  if (lead >= 0) {
    const Agent& l = s.agents[static_cast<std::size_t>(lead)];
    const double gap = (l.x - l.length / 2) - (a.x + a.length / 2);
    const double gap_des = p.headway * a.speed;
    accel += p.k_g * (gap - gap_des);
  }
  return std::clamp(accel, -p.a_max, p.a_max);
}

}  // namespace

Measurements WorldState::ego_measurements() const {
  const Agent& e = ego();
  return {{e.x, e.y}, {e.speed * std::cos(e.heading), e.speed * std::sin(e.heading)}};
}

bool world_step(WorldState& state, const ActionCmd& ego_action) {
  // accelerations from the pre-step state so the update is simultaneous
  std::vector<double> accel(state.agents.size(), 0.0);
  for (std::size_t i = 0; i < state.agents.size(); ++i) {
    if (static_cast<int>(i) == state.ego_index) continue;
    accel[i] = follower_accel(state, i);
  }
  if (state.ego_index >= 0) {
    Agent& e = state.agents[static_cast<std::size_t>(state.ego_index)];
    const auto r = measurement_step(state.ego_measurements(), ego_action, state.dt, e.heading);
    e.x = r.next.p.x;
    e.y = r.next.p.y;
    e.speed = std::hypot(r.next.v.x, r.next.v.y);
    e.heading = r.heading_after;
  }
  for (std::size_t i = 0; i < state.agents.size(); ++i) {
    if (static_cast<int>(i) == state.ego_index) continue;
    Agent& a = state.agents[i];
    a.speed = std::max(0.0, a.speed + accel[i] * state.dt);
    a.x += a.speed * state.dt;
  }
  state.time += state.dt;

  bool collided = false;
  for (std::size_t i = 0; i < state.agents.size() && !collided; ++i) {
    const Rect ri = agent_rect(state.agents[i]);
    for (std::size_t j = i + 1; j < state.agents.size() && !collided; ++j)
      collided = ri.overlaps(agent_rect(state.agents[j]));
    for (const auto& o : state.obstacles)
      if (ri.overlaps(obstacle_rect(o))) collided = true;
  }
  return collided;
}

Ogm rasterize(const WorldState& state, const RasterSpec& raster) {
  Ogm frame;
  const int C = raster.with_map_channel ? 3 : 2;
  frame.grid = make_grid(raster.h, raster.w, C);
  frame.ego_anchor_row = raster.anchor_row;
  frame.ego_anchor_col = raster.anchor_col;
  frame.meters_per_pixel = raster.meters_per_pixel;
  frame.binary_mode = raster.binary;
  frame.roles = raster.with_map_channel
                    ? std::vector<ChannelRole>{ChannelRole::kMap, ChannelRole::kOccupancy, ChannelRole::kEgo}
                    : std::vector<ChannelRole>{ChannelRole::kOccupancy, ChannelRole::kEgo};

  double ex = 0.0, ey = 0.0, eh = 0.0;
  if (state.ego_index >= 0) {
    const Agent& e = state.ego();
    ex = e.x;
    ey = e.y;
    eh = e.heading;
  }
  const double ch = std::cos(eh), sh = std::sin(eh);
  const double mpp = raster.meters_per_pixel;

  auto to_view = [&](double wx, double wy, double& row, double& col) {
    const double dx = wx - ex, dy = wy - ey;
    const double bx = ch * dx + sh * dy;   // body forward
    const double by = -sh * dx + ch * dy;  // body left
    row = raster.anchor_row - bx / mpp;
    col = raster.anchor_col - by / mpp;
  };

  if (raster.with_map_channel) {
    // road band and lane boundary lines evaluated per pixel in road coordinates
    const double road_hi = state.lane_count * state.lane_width;
    const double ramp = 0.3, line_half = 0.2;
    const double rel_ex = ex - state.road_origin_x, rel_ey = ey - state.road_origin_y;
    for (int i = 0; i < raster.h; ++i) {
      for (int j = 0; j < raster.w; ++j) {
        const double bx = (raster.anchor_row - i) * mpp;
        const double by = (raster.anchor_col - j) * mpp;
        const double ry = rel_ey + sh * bx + ch * by;
        double road = 0.0;
        const double inset = std::min(ry, road_hi - ry);
        if (inset > 0) road = 0.35 * std::clamp(inset / ramp, 0.0, 1.0);
        double line = 0.0;
        for (int l = 0; l <= state.lane_count; ++l) {
          const double d = std::abs(ry - l * state.lane_width);
          line = std::max(line, 0.9 * std::clamp((line_half + ramp - d) / ramp, 0.0, 1.0));
        }
        float& px = frame.grid.at(0, i, j);
        px = static_cast<float>(std::max(road, line));
        if (raster.binary) px = px >= 0.5f ? 1.0f : 0.0f;
      }
    }
  }

  const int occ = raster.with_map_channel ? 1 : 0;
  auto stamp_world_rect = [&](double cx, double cy, double len, double wid) {
    double row, col;
    to_view(cx, cy, row, col);
    if (row < -len / mpp || row > raster.h + len / mpp || col < -wid / mpp || col > raster.w + wid / mpp)
      return;  // fully outside the view
    stamp_rect(frame.grid, occ, row, col, len / mpp, wid / mpp, raster.binary);
  };
  for (const auto& o : state.obstacles) stamp_world_rect(o.cx, o.cy, o.len, o.wid);
  for (std::size_t i = 0; i < state.agents.size(); ++i) {
    if (static_cast<int>(i) == state.ego_index) continue;
    const Agent& a = state.agents[i];
    stamp_world_rect(a.x, a.y, a.length, a.width);
  }
  if (state.ego_index >= 0) stamp_ego(frame, raster.ego_len_px, raster.ego_wid_px);
  return frame;
}

ScenarioSpec scenario_from_config(const RunConfig& raw) {
  const RunConfig cfg = resolved(raw);
  ScenarioSpec s;
  s.mode = cfg.mode;
  s.grid_h = cfg.grid_h;
  s.grid_w = cfg.grid_w;
  s.meters_per_pixel = cfg.meters_per_pixel;
  s.dt = cfg.dt;
  s.length = cfg.sequence_length;
  s.n_agents = cfg.n_agents;
  s.lanes = cfg.lanes;
  s.policy = cfg.action_policy;
  s.rare_kind = cfg.rare_kind;
  s.rare_start = cfg.input_frames;
  s.scripted_brake_start = cfg.scripted_brake_start;
  s.scripted_brake_len = cfg.scripted_brake_len;
  s.scripted_alpha = cfg.scripted_alpha;
  s.ego_len_px = cfg.ego_len_px;
  s.ego_wid_px = cfg.ego_wid_px;
  s.seed = cfg.seed;
  return s;
}

WorldState initial_world(const ScenarioSpec& spec, Rng& rng) {
  const bool urban = spec.mode == Mode::kUrban;
  WorldState w;
  w.lane_count = spec.lanes;
  w.lane_width = 3.0;
  w.dt = spec.dt;

  Agent ego;
  ego.lane = spec.lanes / 2;
  ego.x = 0.0;
  ego.y = w.lane_center(ego.lane);
  ego.speed = urban ? rng.uniform(0.8, 2.5) : rng.uniform(9.0, 13.0);
  ego.heading = 0.0;
  ego.length = 4.5;
  ego.width = 2.0;
  w.agents.push_back(ego);
  w.ego_index = 0;

  auto speed_range = [&](double& lo, double& hi) {
    if (urban) {
      lo = 0.5;
      hi = 3.0;
    } else {
      lo = 7.0;
      hi = 14.0;
    }
  };
  double lo, hi;
  speed_range(lo, hi);

  auto add_agent = [&](int lane, double x, double speed) {
    Agent a;
    a.lane = lane;
    a.x = x;
    a.y = w.lane_center(lane);
    a.speed = speed;
    a.length = urban ? 4.0 : 4.5;
    a.width = urban ? 1.8 : 2.0;
    a.behavior.v_des = std::clamp(speed + rng.uniform(-1.0, 1.0), lo, hi);
    a.behavior.k_v = 0.5;
    a.behavior.k_g = 0.3;
    a.behavior.headway = 2.0;
    a.behavior.a_max = 5.0;
    w.agents.push_back(a);
  };

  // one follower and one leader in the ego lane keep interactions present
  // and inside the rendered view
  const double view = spec.grid_h * spec.meters_per_pixel / 2.0;
  const double gap_lo = urban ? 4.5 : 8.0;
  const double gap_hi = std::max(gap_lo + 2.0, view * 0.8);
  int placed = 0;
  if (spec.n_agents >= 1) {
    add_agent(ego.lane, ego.x - rng.uniform(gap_lo, gap_hi), rng.uniform(lo, hi));
    ++placed;
  }
  if (spec.n_agents >= 2) {
    add_agent(ego.lane, ego.x + rng.uniform(gap_lo + 1.0, gap_hi + 2.0), rng.uniform(lo, hi));
    ++placed;
  }
  int guard = 0;
  while (placed < spec.n_agents && guard < 1000) {
    ++guard;
    const int lane = rng.uniform_int(0, spec.lanes - 1);
    const double x = ego.x + rng.uniform(-view * 1.5, view * 1.5);
    bool ok = true;
    for (const auto& a : w.agents) {
      const int alane = (&a == &w.agents[0]) ? nearest_lane(w, a.y) : a.lane;
      if (alane == lane && std::abs(a.x - x) < 8.0) ok = false;
    }
    if (!ok) continue;
    add_agent(lane, x, rng.uniform(lo, hi));
    ++placed;
  }

  if (urban) {
    const int n_obstacles = rng.uniform_int(2, 4);
    for (int i = 0; i < n_obstacles; ++i) {
      const bool left = rng.uniform() < 0.5;
      ObstacleRect o;
      o.cx = ego.x + rng.uniform(-view, view * 2.0);
      o.cy = left ? spec.lanes * w.lane_width + 1.2 : -1.2;
      o.len = rng.uniform(2.0, 4.5);
      o.wid = 1.8;
      w.obstacles.push_back(o);
    }
  }
  return w;
}

ActionStats compute_action_stats(const std::vector<ActionCmd>& actions) {
  ActionStats s;
  if (actions.empty()) return s;
  double sa = 0, st = 0;
  for (const auto& a : actions) {
    sa += a.alpha;
    st += a.tau;
  }
  s.mean_alpha = sa / actions.size();
  s.mean_tau = st / actions.size();
  double va = 0, vt = 0;
  for (const auto& a : actions) {
    va += (a.alpha - s.mean_alpha) * (a.alpha - s.mean_alpha);
    vt += (a.tau - s.mean_tau) * (a.tau - s.mean_tau);
  }
  s.std_alpha = std::sqrt(va / actions.size());
  s.std_tau = std::sqrt(vt / actions.size());
  return s;
}

ActionStats reference_action_stats(ScenarioSpec spec, int sequences) {
  spec.policy = ActionPolicy::kRecorded;
  std::vector<ActionCmd> all;
  for (int i = 0; i < sequences; ++i) {
    ScenarioSpec s = spec;
    s.seed = spec.seed * 1000003ULL + static_cast<std::uint64_t>(i) + 17ULL;
    SequenceRecord rec = generate(s);
    all.insert(all.end(), rec.actions.begin(), rec.actions.end());
  }
  return compute_action_stats(all);
}

std::vector<ActionCmd> sample_rare_actions(Rng& rng, RareKind kind, const ActionStats& stats,
                                           const ActionBounds& bounds) {
  const int n = 20;
  std::vector<ActionCmd> out;
  out.reserve(n);
  switch (kind) {
    case RareKind::kBrake:
      for (int i = 0; i < n; ++i) out.push_back({-25.0, 0.0});
      break;
    case RareKind::kSteer: {
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      for (int i = 0; i < n; ++i) out.push_back(clamp_action({0.0, sign * bounds.tau_max * 0.9}, bounds));
      break;
    }
    case RareKind::kTail:
      for (int i = 0; i < n; ++i) {
        auto tail_draw = [&](double mean, double stddev, double lo2, double hi2) {
          const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
          const double mag = 2.0 * stddev + stddev * (-std::log(1.0 - rng.uniform())) + 1e-6;
          return std::clamp(mean + sign * mag, lo2, hi2);
        };
        ActionCmd a;
        a.alpha = tail_draw(stats.mean_alpha, std::max(stats.std_alpha, 0.05), bounds.alpha_min, bounds.alpha_max);
        a.tau = tail_draw(stats.mean_tau, std::max(stats.std_tau, 0.01), bounds.tau_min, bounds.tau_max);
        out.push_back(a);
      }
      break;
  }
  return out;
}

SequenceRecord generate(const ScenarioSpec& spec) {
  if (spec.length < 2) throw ConfigError("generate: sequence length must be at least 2");
  Rng rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  WorldState world = initial_world(spec, rng);

  RasterSpec raster;
  raster.h = spec.grid_h;
  raster.w = spec.grid_w;
  raster.meters_per_pixel = spec.meters_per_pixel;
  raster.anchor_row = spec.grid_h / 2.0;
  raster.anchor_col = spec.grid_w / 2.0;
  raster.binary = spec.mode == Mode::kUrban;
  raster.with_map_channel = spec.mode == Mode::kHighway;
  raster.ego_len_px = spec.ego_len_px;
  raster.ego_wid_px = spec.ego_wid_px;

  std::vector<ActionCmd> rare;
  if (spec.policy == ActionPolicy::kRareSample) {
    ActionStats stats;
    if (spec.rare_kind == RareKind::kTail) stats = reference_action_stats(spec);
    rare = sample_rare_actions(rng, spec.rare_kind, stats);
  }

  SequenceRecord rec;
  rec.h = spec.grid_h;
  rec.w = spec.grid_w;
  rec.c = raster.with_map_channel ? 3 : 2;
  rec.meters_per_pixel = spec.meters_per_pixel;
  rec.dt = spec.dt;
  rec.ego_anchor_row = raster.anchor_row;
  rec.ego_anchor_col = raster.anchor_col;
  rec.binary_mode = raster.binary;
  rec.roles = raster.with_map_channel
                  ? std::vector<ChannelRole>{ChannelRole::kMap, ChannelRole::kOccupancy, ChannelRole::kEgo}
                  : std::vector<ChannelRole>{ChannelRole::kOccupancy, ChannelRole::kEgo};
  rec.length = spec.length;

  const ActionBounds bounds;
  const bool urban = spec.mode == Mode::kUrban;
  double v_des_phase = urban ? rng.uniform(1.0, 3.0) : rng.uniform(9.0, 14.0);
  int phase_left = rng.uniform_int(10, 24);

  for (int t = 0; t < spec.length; ++t) {
    rec.push_frame(rasterize(world, raster));
    rec.measurements.push_back(world.ego_measurements());
    if (t + 1 == spec.length) break;

    // recorded policy: speed tracking toward a per-phase target plus gap
    // keeping behind a leader, with mean-reverting heading noise
    if (--phase_left <= 0) {
      phase_left = rng.uniform_int(10, 24);
      // stop-and-go phases keep low-speed and stopped ego states in
      // distribution; only the actions that cause them stay moderate
      if (urban) {
        v_des_phase = rng.uniform() < 0.3 ? 0.0 : rng.uniform(1.0, 3.0);
      } else {
        const double u = rng.uniform();
        v_des_phase = u < 0.15 ? 0.0 : (u < 0.3 ? rng.uniform(1.0, 5.0) : rng.uniform(8.0, 14.0));
      }
    }
    const Agent& e = world.ego();
    double alpha = 0.5 * (v_des_phase - e.speed);
    const int lead = leader_of(world, static_cast<std::size_t>(world.ego_index));
    if (lead >= 0) {
      const Agent& l = world.agents[static_cast<std::size_t>(lead)];
      const double gap = (l.x - l.length / 2) - (e.x + e.length / 2);
      alpha += 0.3 * (gap - 2.0 * e.speed);
    }
    alpha = std::clamp(alpha, -5.0, 5.0) + rng.uniform(-0.3, 0.3);
    double tau = -1.5 * e.heading + rng.normal(0.0, urban ? 0.02 : 0.03);
    tau = std::clamp(tau, -0.5, 0.5);
    ActionCmd action{alpha, tau};

    if (spec.policy == ActionPolicy::kScripted && t >= spec.scripted_brake_start &&
        t < spec.scripted_brake_start + spec.scripted_brake_len) {
      action = {spec.scripted_alpha, 0.0};
    } else if (spec.policy == ActionPolicy::kRareSample && t >= spec.rare_start) {
      const int k = t - spec.rare_start;
      action = k < static_cast<int>(rare.size()) ? rare[static_cast<std::size_t>(k)] : ActionCmd{0.0, 0.0};
    }
    action = clamp_action(action, bounds);
    rec.actions.push_back(action);
    if (world_step(world, action)) rec.collision = true;
  }
  return rec;
}

}  // namespace gridcast
