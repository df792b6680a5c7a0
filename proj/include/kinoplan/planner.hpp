// Copyright 2026 The kinoplan Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <optional>

#include "kinoplan/costmap.hpp"
#include "kinoplan/geometry.hpp"
#include "kinoplan/network.hpp"
#include "kinoplan/rng.hpp"
#include "kinoplan/rrtstar.hpp"

namespace kinoplan {

struct PlannerConfig {
  int max_steps = 50;  // N: network samples per planning call
  double goal_pos_tol = 0.2;
  double goal_ang_tol = 0.2617993877991494;  // 15 degrees
  double steer_step = 0.05;
  // <= 0 derives the cap from the window: 1.5 local-costmap diagonals.
  double steer_max_length = -1.0;
  bool stochastic = true;  // dropout active while proposing
  std::uint64_t rng_seed = 1;

  // Test observer: called after each egocentric re-transform.
  std::function<void(const PaddedCostmap&, const Pose2D&)> on_transform;
};

struct PlanStats {
  int iterations = 0;
  int failed_steers = 0;
  int invalid_proposals = 0;
  bool neural_success = false;
  bool replanner_invoked = false;
};

/// A next-step proposal source: normalized egocentric (current, goal) plus
/// the raw padded patch in, normalized next state out. Lets tests swap the
/// network for stubs.
using Proposer = std::function<std::array<double, 4>(
    const std::vector<std::uint8_t>& patch, const std::array<double, 4>& current,
    const std::array<double, 4>& goal, Rng& rng)>;

/// Sampling-based fallback hook (typically anytime RRT* with the remaining
/// cycle budget).
using Replanner = std::function<std::optional<Trajectory>(const Pose2D&, const Pose2D&)>;

inline Proposer make_net_proposer(const NetworkParams& params, bool stochastic) {
  auto ctx = std::make_shared<InferenceContext>(params);
  return [ctx, stochastic](const std::vector<std::uint8_t>& patch,
                           const std::array<double, 4>& current,
                           const std::array<double, 4>& goal,
                           Rng& rng) { return ctx->propose(patch, current, goal, stochastic, rng); };
}

inline double default_steer_cap(const Costmap& source) {
  return 1.5 * source.width_m() * std::sqrt(2.0);
}

namespace detail {

inline std::array<double, 4> encode_relative(const Pose2D& p, const Pose2D& center,
                                             double half_extent) {
  return {(p.x - center.x) / half_extent, (p.y - center.y) / half_extent, std::cos(p.theta),
          std::sin(p.theta)};
}

}  // namespace detail

/// Iterative neural roll-out: propose a step, steer to it, try the goal
/// connection from there, re-center the padded costmap, repeat up to N times.
/// The goal connection is an exact steer, so a returned trajectory ends at
/// x_goal exactly. Empty after N failed expansions.
inline std::optional<Trajectory> neural_plan(const Pose2D& x_from_in, const Pose2D& x_goal,
                                             const PaddedCostmap& padded, const Proposer& propose,
                                             const VehicleModel& model,
                                             const PlannerConfig& config,
                                             PlanStats* stats = nullptr) {
  PlanStats local;
  PlanStats& st = stats ? *stats : local;
  const double half_extent = padded.source.size_l * padded.source.resolution;
  const double max_len =
      config.steer_max_length > 0.0 ? config.steer_max_length : default_steer_cap(padded.source);
  Rng rng(config.rng_seed);

  Pose2D x_from = x_from_in;
  PaddedCostmap ego = transform_egocentric(padded, x_from);
  if (config.on_transform) config.on_transform(ego, x_from);

  Trajectory tau;
  tau.poses = {x_from};
  for (int i = 0; i < config.max_steps; ++i) {
    ++st.iterations;
    const std::array<double, 4> current = {0.0, 0.0, std::cos(x_from.theta),
                                           std::sin(x_from.theta)};
    const auto goal_enc = detail::encode_relative(x_goal, x_from, half_extent);
    const auto v = propose(ego.grid.cells, current, goal_enc, rng);

    const double norm = std::hypot(v[2], v[3]);
    if (!(norm > 1e-9) || !std::isfinite(v[0]) || !std::isfinite(v[1]) || std::abs(v[0]) > 1.0 ||
        std::abs(v[1]) > 1.0) {
      ++st.invalid_proposals;
      continue;
    }
    const Pose2D x_temp(x_from.x + v[0] * half_extent, x_from.y + v[1] * half_extent,
                        std::atan2(v[3], v[2]));

    const auto tau_temp = steer(x_from, x_temp, ego.grid, model, max_len, config.steer_step);
    if (!tau_temp) {
      ++st.failed_steers;
      continue;
    }
    tau.append(*tau_temp);
    const auto tau_goal = steer(x_temp, x_goal, ego.grid, model, max_len, config.steer_step);
    if (tau_goal) {
      tau.append(*tau_goal);
      st.neural_success = true;
      return tau;
    }
    x_from = x_temp;
    ego = transform_egocentric(padded, x_from);
    if (config.on_transform) config.on_transform(ego, x_from);
  }
  return std::nullopt;
}

struct MpnetResult {
  std::optional<Trajectory> trajectory;
  PlanStats stats;
};

/// One planning cycle: pad the local map, try the neural planner, and only
/// when it comes back empty hand the problem to the sampling-based fallback,
/// which preserves probabilistic completeness.
inline MpnetResult mpnet_plan(const Pose2D& x_start, const Pose2D& x_goal, const Costmap& costmap,
                              const Proposer& propose, const Replanner& replan,
                              const VehicleModel& model, const PlannerConfig& config) {
  MpnetResult result;
  const PaddedCostmap padded = pad(costmap);
  result.trajectory = neural_plan(x_start, x_goal, padded, propose, model, config, &result.stats);
  if (!result.trajectory) {
    result.stats.replanner_invoked = true;
    result.trajectory = replan(x_start, x_goal);
  }
  return result;
}

/// Fresh-tree anytime RRT* fallback bound to a map and budget.
inline Replanner make_rrt_replanner(const Costmap& map, const VehicleModel& model,
                                    RRTStarConfig config) {
  return [map, model, config](const Pose2D& start, const Pose2D& goal) -> std::optional<Trajectory> {
    if (!map.point_free(start.x, start.y)) return std::nullopt;
    RRTStarPlanner planner(start, goal, map, model, config);
    return planner.plan();
  };
}

// ---------------------------------------------------------------------------
// Latency measurement
// ---------------------------------------------------------------------------

struct LatencyStats {
  double median_ms = 0.0;
  double q25_ms = 0.0;
  double q75_ms = 0.0;
  int n_samples = 0;
};

/// Wall-clock cost of producing `n_samples` full network+steer iterations
/// (no early exit), median over `runs` measured plans. The kernel mirrors
/// neural_plan: propose, steer, attempt the goal connection, re-transform.
inline LatencyStats plan_latency(const NetworkParams& net, const PaddedCostmap& padded,
                                 const VehicleModel& model, const PlannerConfig& config,
                                 int n_samples, int runs = 30) {
  if (n_samples < 1 || runs < 1) {
    throw std::invalid_argument("plan_latency: need at least one sample and one run");
  }
  const double half_extent = padded.source.size_l * padded.source.resolution;
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(runs));
  const Pose2D start = padded.center_pose;
  const Pose2D goal(start.x + 0.8 * half_extent, start.y + 0.6 * half_extent, 0.0);

  for (int r = 0; r < runs + 1; ++r) {
    const auto t0 = std::chrono::steady_clock::now();

    InferenceContext ctx(net);
    Rng rng(derive_seed(config.rng_seed, static_cast<std::uint64_t>(r)));
    Pose2D x_from = start;
    PaddedCostmap ego = transform_egocentric(padded, x_from);
    const double max_len = config.steer_max_length > 0.0 ? config.steer_max_length
                                                         : default_steer_cap(padded.source);
    Trajectory tau;
    tau.poses = {x_from};
    for (int i = 0; i < n_samples; ++i) {
      const std::array<double, 4> current = {0.0, 0.0, std::cos(x_from.theta),
                                             std::sin(x_from.theta)};
      const auto goal_enc = detail::encode_relative(goal, x_from, half_extent);
      const auto v = ctx.propose(ego.grid.cells, current, goal_enc, config.stochastic, rng);
      if (!(std::hypot(v[2], v[3]) > 1e-9)) continue;
      const Pose2D x_temp(x_from.x + v[0] * half_extent, x_from.y + v[1] * half_extent,
                          std::atan2(v[3], v[2]));
      const auto tau_temp = steer(x_from, x_temp, ego.grid, model, max_len, config.steer_step);
      if (!tau_temp) continue;
      tau.append(*tau_temp);
      (void)steer(x_temp, goal, ego.grid, model, max_len, config.steer_step);
      x_from = x_temp;
      ego = transform_egocentric(padded, x_from);
    }

    const auto t1 = std::chrono::steady_clock::now();
    if (r == 0) continue;  // warmup excluded
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  LatencyStats out;
  out.n_samples = n_samples;
  out.median_ms = times[times.size() / 2];
  out.q25_ms = times[times.size() / 4];
  out.q75_ms = times[(3 * times.size()) / 4];
  return out;
}

}  // namespace kinoplan
