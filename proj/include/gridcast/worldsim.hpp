// SPDX-License-Identifier: Apache-2.0
//
// Seedable multi-agent traffic generator. The ego follows the
// measurement_step kinematics under a recorded, scripted, or rare-action
// policy; every other agent follows a deterministic car-following rule along
// its lane, reacting to the nearest vehicle ahead (which may be the ego).
#pragma once

#include <cstdint>
#include <vector>

#include "gridcast/kinematics.hpp"
#include "gridcast/ogm.hpp"
#include "gridcast/record.hpp"
#include "gridcast/rng.hpp"
#include "gridcast/run_config.hpp"

namespace gridcast {

struct BehaviorParams {
  double v_des = 10.0;
  double k_v = 0.5;
  double k_g = 0.3;
  double headway = 2.0;  // seconds
  double a_max = 5.0;
};

struct Agent {
  double x = 0.0;  // along-road position, meters
  double y = 0.0;
  double speed = 0.0;
  double heading = 0.0;  // meaningful for the ego only
  int lane = 0;
  double length = 4.5;
  double width = 2.0;
  BehaviorParams behavior;
};

struct ObstacleRect {
  double cx = 0.0, cy = 0.0;
  double len = 2.0, wid = 2.0;
};

struct WorldState {
  int lane_count = 3;
  double lane_width = 3.0;
  double road_origin_x = 0.0;  // anchors the dash pattern and lane zero
  double road_origin_y = 0.0;
  std::vector<ObstacleRect> obstacles;
  std::vector<Agent> agents;
  int ego_index = -1;  // -1 renders an egoless view from the origin
  double dt = 0.1;
  double time = 0.0;

  const Agent& ego() const { return agents.at(static_cast<std::size_t>(ego_index)); }
  Measurements ego_measurements() const;
  double lane_center(int lane) const { return road_origin_y + (lane + 0.5) * lane_width; }
};

// Advances every agent by one step: the ego by the kinematic update, the
// rest by the car-following rule. Returns true when any two rectangles
// overlap after the step.
bool world_step(WorldState& state, const ActionCmd& ego_action);

struct RasterSpec {
  int h = 64, w = 64;
  double meters_per_pixel = 0.5;
  double anchor_row = 32.0, anchor_col = 32.0;
  bool binary = false;
  bool with_map_channel = true;  // highway layout: map, occupancy, ego
  double ego_len_px = 9.0, ego_wid_px = 4.0;
};

// Ego-centered, heading-aligned view (forward = up).
Ogm rasterize(const WorldState& state, const RasterSpec& raster);

struct ScenarioSpec {
  Mode mode = Mode::kHighway;
  int grid_h = 64, grid_w = 64;
  double meters_per_pixel = 0.5;
  double dt = 0.1;
  int length = 40;
  int n_agents = 8;
  int lanes = 3;
  ActionPolicy policy = ActionPolicy::kRecorded;
  RareKind rare_kind = RareKind::kBrake;
  int rare_start = 10;
  int scripted_brake_start = 14;
  int scripted_brake_len = 12;
  double scripted_alpha = -6.0;
  double ego_len_px = 9.0, ego_wid_px = 4.0;
  std::uint64_t seed = 0;
};

ScenarioSpec scenario_from_config(const RunConfig& cfg);

SequenceRecord generate(const ScenarioSpec& spec);

struct ActionStats {
  double mean_alpha = 0.0, std_alpha = 1.0;
  double mean_tau = 0.0, std_tau = 1.0;
};

ActionStats compute_action_stats(const std::vector<ActionCmd>& actions);

// Empirical action statistics of the regular policy for a scenario family,
// gathered by simulating a few sequences.
ActionStats reference_action_stats(ScenarioSpec spec, int sequences = 4);

// Rare-action protocol: hard-brake is the constant alpha=-25 sequence for 20
// steps; steer saturates the heading-rate; tail-sample draws from beyond the
// 2-sigma band of the reference action distribution.
std::vector<ActionCmd> sample_rare_actions(Rng& rng, RareKind kind, const ActionStats& stats,
                                           const ActionBounds& bounds = {});

// Seeded initial world for a scenario (exposed for scenario-level tests).
WorldState initial_world(const ScenarioSpec& spec, Rng& rng);

}  // namespace gridcast
