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

#include "kinoplan/planner.hpp"

#include "gtest/gtest.h"

namespace kinoplan {
namespace {

const VehicleModel kModel(0.5, 0.3, 0.7);

Costmap local_map(int l = 40) { return Costmap(l, 0.1, Pose2D(0, 0, 0), 0, "local"); }

// Proposes a fixed fraction of the way toward the goal, always feasible on an
// empty map.
Proposer toward_goal_stub(double fraction = 0.2) {
  return [fraction](const std::vector<std::uint8_t>&, const std::array<double, 4>& current,
                    const std::array<double, 4>& goal, Rng&) -> std::array<double, 4> {
    (void)current;
    return {goal[0] * fraction, goal[1] * fraction, goal[2], goal[3]};
  };
}

Proposer always_invalid_stub() {
  return [](const std::vector<std::uint8_t>&, const std::array<double, 4>&,
            const std::array<double, 4>&, Rng&) -> std::array<double, 4> {
    return {0.0, 0.0, 0.0, 0.0};  // zero-norm heading: iteration failure
  };
}

Proposer uniform_random_stub() {
  return [](const std::vector<std::uint8_t>&, const std::array<double, 4>&,
            const std::array<double, 4>&, Rng& rng) -> std::array<double, 4> {
    const double th = rng.uniform(-kPi, kPi);
    return {rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25), std::cos(th), std::sin(th)};
  };
}

TEST(NeuralPlan, GoalConnectionEndsExactlyAtGoal) {
  const Costmap m = local_map();
  const PaddedCostmap padded = pad(m);
  const Pose2D start(2.0, 2.0, 0.0), goal(3.2, 2.3, 0.2);
  PlannerConfig cfg;
  PlanStats stats;
  const auto tau = neural_plan(start, goal, padded, toward_goal_stub(), kModel, cfg, &stats);
  ASSERT_TRUE(tau.has_value());
  EXPECT_TRUE(stats.neural_success);
  EXPECT_EQ(tau->poses.front(), start);
  EXPECT_EQ(tau->poses.back(), goal);  // exact Dubins connection
  for (const Pose2D& p : tau->poses) {
    ASSERT_TRUE(m.point_free(p.x, p.y));
  }
}

TEST(NeuralPlan, WalledGoalFailsAfterNIterations) {
  Costmap m = local_map();
  for (int i = 12; i <= 28; ++i) {
    m.at(i, 12) = kLethalCost;
    m.at(i, 28) = kLethalCost;
    m.at(12, i) = kLethalCost;
    m.at(28, i) = kLethalCost;
  }
  const PaddedCostmap padded = pad(m);
  const Pose2D start(0.5, 0.5, 0.0), goal(2.0, 2.0, 0.0);  // inside the box
  PlannerConfig cfg;
  cfg.max_steps = 12;
  PlanStats stats;
  const auto tau = neural_plan(start, goal, padded, uniform_random_stub(), kModel, cfg, &stats);
  EXPECT_FALSE(tau.has_value());
  EXPECT_EQ(stats.iterations, 12);
  EXPECT_FALSE(stats.neural_success);
}

TEST(NeuralPlan, TransformDisciplineTracksCurrentPose) {
  const Costmap m = local_map();
  const PaddedCostmap padded = pad(m);
  PlannerConfig cfg;
  cfg.max_steps = 6;
  cfg.steer_max_length = 0.3;  // keep the goal connection failing for a while
  std::vector<Pose2D> seen_centers;
  cfg.on_transform = [&](const PaddedCostmap& ego, const Pose2D& x_from) {
    ASSERT_EQ(ego.center_pose, x_from);
    // The grid center cell must contain the current pose.
    const int cx = ego.grid.cell_x(x_from.x), cy = ego.grid.cell_y(x_from.y);
    ASSERT_EQ(cx, m.size_l);
    ASSERT_EQ(cy, m.size_l);
    seen_centers.push_back(x_from);
  };
  PlanStats stats;
  // Start and goal aligned along one line: the stub's small steps stay
  // steerable while the goal stays beyond the cap, so several transforms run.
  neural_plan(Pose2D(1.0, 1.0, kPi / 4), Pose2D(3.4, 3.4, kPi / 4), padded,
              toward_goal_stub(0.05), kModel, cfg, &stats);
  EXPECT_GT(seen_centers.size(), 2u);
}

TEST(NeuralPlan, InvalidProposalsCountedNotFatal) {
  const Costmap m = local_map();
  const PaddedCostmap padded = pad(m);
  PlannerConfig cfg;
  cfg.max_steps = 5;
  PlanStats stats;
  const auto tau =
      neural_plan(Pose2D(2, 2, 0), Pose2D(3, 2, 0), padded, always_invalid_stub(), kModel, cfg,
                  &stats);
  EXPECT_FALSE(tau.has_value());
  EXPECT_EQ(stats.invalid_proposals, 5);
}

TEST(MpnetPlan, NeuralSuccessSkipsReplanner) {
  const Costmap m = local_map();
  int replanner_calls = 0;
  Replanner counting = [&](const Pose2D&, const Pose2D&) -> std::optional<Trajectory> {
    ++replanner_calls;
    return std::nullopt;
  };
  PlannerConfig cfg;
  const auto result = mpnet_plan(Pose2D(2, 2, 0), Pose2D(3, 2.2, 0.1), m, toward_goal_stub(),
                                 counting, kModel, cfg);
  ASSERT_TRUE(result.trajectory.has_value());
  EXPECT_FALSE(result.stats.replanner_invoked);
  EXPECT_EQ(replanner_calls, 0);
}

TEST(MpnetPlan, FailedNeuralFallsBackBitExactly) {
  Costmap m = local_map();
  for (int b = 0; b < 4; ++b) {
    for (int dy = 0; dy < 3; ++dy)
      for (int dx = 0; dx < 3; ++dx) m.at(8 + 8 * b + dx, 14 + dy) = kLethalCost;
  }
  RRTStarConfig rrt;
  rrt.max_iterations = 600;
  rrt.rng_seed = 99;
  const Pose2D start(0.8, 0.8, 0.4), goal(3.2, 3.2, -0.3);

  PlannerConfig cfg;
  cfg.max_steps = 8;
  const auto result = mpnet_plan(start, goal, m, always_invalid_stub(),
                                 make_rrt_replanner(m, kModel, rrt), kModel, cfg);
  ASSERT_TRUE(result.stats.replanner_invoked);
  ASSERT_TRUE(result.trajectory.has_value());

  const auto direct = plan_rrtstar(start, goal, m, kModel, rrt);
  ASSERT_TRUE(direct.has_value());
  ASSERT_EQ(result.trajectory->poses.size(), direct->poses.size());
  for (std::size_t i = 0; i < direct->poses.size(); ++i) {
    ASSERT_EQ(result.trajectory->poses[i], direct->poses[i]);
  }
}

TEST(MpnetPlan, UnsolvableReportsBothAttempts) {
  Costmap m = local_map();
  for (int i = 10; i <= 20; ++i) {
    m.at(i, 10) = kLethalCost;
    m.at(i, 20) = kLethalCost;
    m.at(10, i) = kLethalCost;
    m.at(20, i) = kLethalCost;
  }
  RRTStarConfig rrt;
  rrt.max_iterations = 300;
  PlannerConfig cfg;
  cfg.max_steps = 6;
  const auto result = mpnet_plan(Pose2D(0.5, 0.5, 0), Pose2D(1.5, 1.5, 0), m,
                                 uniform_random_stub(), make_rrt_replanner(m, kModel, rrt),
                                 kModel, cfg);
  EXPECT_FALSE(result.trajectory.has_value());
  EXPECT_EQ(result.stats.iterations, 6);
  EXPECT_TRUE(result.stats.replanner_invoked);
}

TEST(MpnetPlan, RandomStubStillSolvesViaFallback) {
  // Desk-size slice of the completeness contract; the acceptance suite runs
  // the fifty-problem version.
  int solved = 0;
  for (int p = 0; p < 10; ++p) {
    Costmap m = local_map();
    Rng rng(500 + static_cast<std::uint64_t>(p));
    for (int b = 0; b < 5; ++b) {
      const int bx = 4 + static_cast<int>(rng.next_below(30));
      const int by = 4 + static_cast<int>(rng.next_below(30));
      for (int dy = 0; dy < 3; ++dy)
        for (int dx = 0; dx < 3; ++dx) m.at(bx + dx, by + dy) = kLethalCost;
    }
    Pose2D start(0, 0, 0), goal(0, 0, 0);
    do {
      start = Pose2D(rng.uniform(0.5, 3.5), rng.uniform(0.5, 3.5), rng.uniform(-kPi, kPi));
    } while (!m.point_free(start.x, start.y));
    do {
      goal = Pose2D(rng.uniform(0.5, 3.5), rng.uniform(0.5, 3.5), rng.uniform(-kPi, kPi));
    } while (!m.point_free(goal.x, goal.y));
    RRTStarConfig rrt;
    rrt.max_iterations = 4000;
    rrt.stop_at_first_solution = true;
    rrt.rng_seed = 1000 + static_cast<std::uint64_t>(p);
    PlannerConfig cfg;
    cfg.max_steps = 10;
    cfg.rng_seed = static_cast<std::uint64_t>(p);
    const auto result = mpnet_plan(start, goal, m, uniform_random_stub(),
                                   make_rrt_replanner(m, kModel, rrt), kModel, cfg);
    if (result.trajectory) ++solved;
  }
  EXPECT_GE(solved, 9);
}

TEST(PlanLatency, ProducesPositiveNumbers) {
  NetworkConfig ncfg;
  ncfg.patch_l = 10;
  NetworkParams params(ncfg);
  params.init(3);
  const Costmap m(10, 0.1, Pose2D(0, 0, 0), 0, "tiny");
  const PaddedCostmap padded = pad(m);
  PlannerConfig cfg;
  const auto stats = plan_latency(params, padded, kModel, cfg, 5, 5);
  EXPECT_GT(stats.median_ms, 0.0);
  EXPECT_LE(stats.q25_ms, stats.median_ms);
  EXPECT_LE(stats.median_ms, stats.q75_ms);
  EXPECT_THROW(plan_latency(params, padded, kModel, cfg, 0, 5), std::invalid_argument);
}

}  // namespace
}  // namespace kinoplan
