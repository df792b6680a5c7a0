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

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "kinoplan/costmap.hpp"
#include "kinoplan/geometry.hpp"
#include "kinoplan/rng.hpp"

namespace kinoplan {

struct RRTStarConfig {
  int max_iterations = 2000;
  std::optional<double> time_budget_ms;  // wall-clock mode for live planning
  double goal_bias = 0.1;
  double rewire_radius = 2.0;      // m, fixed (no shrinking-ball schedule)
  double goal_pos_tol = 0.2;       // m
  double goal_ang_tol = 0.2617993877991494;  // 15 degrees
  std::uint64_t rng_seed = 1;
  double max_edge_length = 2.0;    // steering truncation per extension
  double steer_step = 0.05;        // collision-check sample spacing
  bool stop_at_first_solution = false;

  void validate() const {
    if (goal_bias < 0.0 || goal_bias > 1.0) {
      throw std::invalid_argument("RRTStarConfig: goal_bias outside [0,1]");
    }
    if (!(goal_pos_tol > 0.0) || !(goal_ang_tol > 0.0)) {
      throw std::invalid_argument("RRTStarConfig: tolerances must be positive");
    }
  }
};

struct TreeNode {
  Pose2D pose;
  int parent = -1;  // -1 for the root
  double cost_from_root = 0.0;
};

/// Dubins-steered RRT* over an occupancy costmap. The tree is retained across
/// grow() calls, which is what makes the planner anytime: the best known path
/// only improves. One instance serves a single caller; run independent
/// instances for parallel work.
class RRTStarPlanner {
 public:
  RRTStarPlanner(const Pose2D& start, const Pose2D& goal, const Costmap& map,
                 const VehicleModel& model, const RRTStarConfig& config)
      : map_(map), model_(model), config_(config), goal_(goal), rng_(config.rng_seed) {
    config_.validate();
    if (!map_.point_free(start.x, start.y)) {
      throw std::invalid_argument("rrtstar: start pose is in collision");
    }
    rho_ = model_.min_turn_radius();
    nodes_.push_back(TreeNode{start, -1, 0.0});
    children_.push_back({});
    if (within_goal(start)) goal_nodes_.push_back(0);
    for (int iy = 0; iy < map_.size_l; ++iy) {
      for (int ix = 0; ix < map_.size_l; ++ix) {
        if (map_.at(ix, iy) < kCollisionThreshold) free_cells_.emplace_back(ix, iy);
      }
    }
    if (free_cells_.empty()) throw std::invalid_argument("rrtstar: map has no free cells");
  }

  /// Runs the configured budget (iterations, or wall-clock when set) and
  /// returns the best path found, empty when the goal was never connected.
  std::optional<Trajectory> plan() {
    if (config_.time_budget_ms) {
      const auto deadline = std::chrono::steady_clock::now() +
                            std::chrono::duration<double, std::milli>(*config_.time_budget_ms);
      while (std::chrono::steady_clock::now() < deadline) {
        iterate();
        if (config_.stop_at_first_solution && !goal_nodes_.empty()) break;
      }
    } else {
      grow(config_.max_iterations);
    }
    return best_path();
  }

  /// Anytime interface: continues the retained tree for `iterations` more
  /// samples and returns the best path so far. A zero budget just reports the
  /// current best, so a warmed tree answers immediately.
  std::optional<Trajectory> grow(int iterations) {
    for (int i = 0; i < iterations; ++i) {
      iterate();
      if (config_.stop_at_first_solution && !goal_nodes_.empty()) break;
    }
    return best_path();
  }

  std::optional<Trajectory> best_path() const {
    const int best = best_goal_node();
    if (best < 0) return std::nullopt;
    return reconstruct(best);
  }

  double best_cost() const {
    const int best = best_goal_node();
    return best < 0 ? std::numeric_limits<double>::infinity() : nodes_[static_cast<std::size_t>(best)].cost_from_root;
  }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  int iterations_done() const { return iterations_done_; }

 private:
  bool within_goal(const Pose2D& p) const {
    return position_distance(p, goal_) <= config_.goal_pos_tol &&
           heading_distance(p, goal_) <= config_.goal_ang_tol;
  }

  double dubins_len(const Pose2D& a, const Pose2D& b) const {
    return dubins_shortest(a, b, rho_).length();
  }

  Pose2D sample_pose() {
    if (rng_.bernoulli(config_.goal_bias)) return goal_;
    const auto& [ix, iy] = free_cells_[rng_.next_below(free_cells_.size())];
    const double x = map_.origin.x + (ix + rng_.next_double()) * map_.resolution;
    const double y = map_.origin.y + (iy + rng_.next_double()) * map_.resolution;
    return Pose2D(x, y, rng_.uniform(-kPi, kPi));
  }

  void iterate() {
    ++iterations_done_;
    const Pose2D sample = sample_pose();

    // Nearest by Dubins length, with the Euclidean lower bound as a cheap
    // prune (dubins >= euclidean).
    int nearest = -1;
    double nearest_len = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (position_distance(nodes_[i].pose, sample) >= nearest_len) continue;
      const double len = dubins_len(nodes_[i].pose, sample);
      if (len < nearest_len) {
        nearest_len = len;
        nearest = static_cast<int>(i);
      }
    }
    if (nearest < 0 || nearest_len < 1e-9) return;

    Pose2D target = sample;
    if (nearest_len > config_.max_edge_length) {
      const DubinsPath to_sample = dubins_shortest(nodes_[static_cast<std::size_t>(nearest)].pose, sample, rho_);
      target = dubins_pose_at(to_sample, config_.max_edge_length);
    }
    if (!map_.point_free(target.x, target.y)) return;

    const auto edge = steer(nodes_[static_cast<std::size_t>(nearest)].pose, target, map_, model_,
                            config_.max_edge_length * 1.01, config_.steer_step);
    if (!edge) return;

    // Choose the lowest-cost collision-free parent within the rewire radius.
    int parent = nearest;
    double new_cost = nodes_[static_cast<std::size_t>(nearest)].cost_from_root + edge->total_length;
    std::vector<int> near_in;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (static_cast<int>(i) == nearest) continue;
      if (position_distance(nodes_[i].pose, target) > config_.rewire_radius) continue;
      const double len = dubins_len(nodes_[i].pose, target);
      if (len > config_.rewire_radius) continue;
      near_in.push_back(static_cast<int>(i));
      const double cost = nodes_[i].cost_from_root + len;
      if (cost < new_cost - 1e-12 &&
          steer(nodes_[i].pose, target, map_, model_, len * 1.01, config_.steer_step)) {
        parent = static_cast<int>(i);
        new_cost = cost;
      }
    }

    const int new_id = static_cast<int>(nodes_.size());
    nodes_.push_back(TreeNode{target, parent, new_cost});
    children_.push_back({});
    children_[static_cast<std::size_t>(parent)].push_back(new_id);
    if (within_goal(target)) goal_nodes_.push_back(new_id);

    // Rewire: adopt nearby nodes whose cost improves through the new node.
    for (std::size_t i = 0; i < nodes_.size() - 1; ++i) {
      if (position_distance(target, nodes_[i].pose) > config_.rewire_radius) continue;
      const double len = dubins_len(target, nodes_[i].pose);
      if (len > config_.rewire_radius) continue;
      const double cost = new_cost + len;
      if (cost < nodes_[i].cost_from_root - 1e-12 &&
          steer(target, nodes_[i].pose, map_, model_, len * 1.01, config_.steer_step)) {
        reparent(static_cast<int>(i), new_id, cost);
      }
    }
  }

  void reparent(int node, int new_parent, double new_cost) {
    auto& old_children = children_[static_cast<std::size_t>(nodes_[static_cast<std::size_t>(node)].parent)];
    old_children.erase(std::find(old_children.begin(), old_children.end(), node));
    nodes_[static_cast<std::size_t>(node)].parent = new_parent;
    children_[static_cast<std::size_t>(new_parent)].push_back(node);
    const double delta = new_cost - nodes_[static_cast<std::size_t>(node)].cost_from_root;
    // Propagate the improvement through the subtree.
    std::vector<int> stack = {node};
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      nodes_[static_cast<std::size_t>(id)].cost_from_root += delta;
      for (int c : children_[static_cast<std::size_t>(id)]) stack.push_back(c);
    }
  }

  int best_goal_node() const {
    int best = -1;
    double best_cost = std::numeric_limits<double>::infinity();
    for (int id : goal_nodes_) {
      const double c = nodes_[static_cast<std::size_t>(id)].cost_from_root;
      if (c < best_cost) {
        best_cost = c;
        best = id;
      }
    }
    return best;
  }

  Trajectory reconstruct(int node) const {
    std::vector<int> chain;
    for (int id = node; id >= 0; id = nodes_[static_cast<std::size_t>(id)].parent) chain.push_back(id);
    std::reverse(chain.begin(), chain.end());
    Trajectory out;
    out.poses = {nodes_[static_cast<std::size_t>(chain.front())].pose};
    for (std::size_t k = 1; k < chain.size(); ++k) {
      const Pose2D& a = nodes_[static_cast<std::size_t>(chain[k - 1])].pose;
      const Pose2D& b = nodes_[static_cast<std::size_t>(chain[k])].pose;
      const auto edge = steer(a, b, map_, model_, config_.max_edge_length * 1.01, config_.steer_step);
      if (!edge) throw std::logic_error("rrtstar: stored edge failed re-steering");
      out.append(*edge);
    }
    return out;
  }

  Costmap map_;
  VehicleModel model_;
  RRTStarConfig config_;
  Pose2D goal_;
  Rng rng_;
  double rho_ = 0.5;
  std::vector<TreeNode> nodes_;
  std::vector<std::vector<int>> children_;
  std::vector<int> goal_nodes_;
  std::vector<std::pair<int, int>> free_cells_;
  int iterations_done_ = 0;
};

/// One-shot expert planning call: grows a fresh tree for the configured
/// budget and returns the minimum-cost path to the goal region, if any.
inline std::optional<Trajectory> plan_rrtstar(const Pose2D& start, const Pose2D& goal,
                                              const Costmap& map, const VehicleModel& model,
                                              const RRTStarConfig& config) {
  RRTStarPlanner planner(start, goal, map, model, config);
  return planner.plan();
}

}  // namespace kinoplan
