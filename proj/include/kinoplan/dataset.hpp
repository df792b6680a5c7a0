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

#include <array>
#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "kinoplan/costmap.hpp"
#include "kinoplan/geometry.hpp"
#include "kinoplan/rng.hpp"
#include "kinoplan/rrtstar.hpp"
#include "kinoplan/serial.hpp"

namespace kinoplan {

/// One expert path on a named map, resampled to a fixed waypoint spacing.
struct TrajectoryRecord {
  std::string map_id;
  std::vector<Pose2D> poses;  // s_0 .. s_T
  std::uint64_t source_seed = 0;
};

/// One supervised sample: everything is expressed in the frame translated to
/// the current waypoint and scaled by the padded window half-extent, with the
/// heading encoded as (cos, sin). The costmap patch stays in raw 0..255 costs;
/// divide by 255 when feeding a network.
struct TrainingTuple {
  std::array<double, 4> current{};  // (0, 0, cos th, sin th) by construction
  std::array<double, 4> goal{};
  std::vector<std::uint8_t> patch;  // (2l)^2 raw costs, row-major
  std::array<double, 4> target{};
};

struct Dataset {
  int patch_l = 40;        // source window size; patches are (2l)^2
  double resolution = 0.1;
  std::vector<TrainingTuple> tuples;

  double window_half_extent() const { return patch_l * resolution; }
};

// ---------------------------------------------------------------------------
// Expert collection
// ---------------------------------------------------------------------------

struct CollectOptions {
  double resample_spacing = 0.2;  // waypoint spacing of stored records
  double min_pair_distance = 0.6;
  double max_pair_distance = 6.0;
  int max_pair_tries = 200;
  // Poses closer than about a turning radius to the map boundary can face
  // away from reachable space (leaving the map counts as collision), so the
  // sampler keeps this margin. Negative means 1.25 * min turn radius.
  double boundary_margin = -1.0;
};

namespace detail {

inline std::optional<Pose2D> sample_free_pose(const Costmap& map, Rng& rng, double margin,
                                              int tries = 200) {
  const double lo_x = map.origin.x + margin, hi_x = map.origin.x + map.width_m() - margin;
  const double lo_y = map.origin.y + margin, hi_y = map.origin.y + map.width_m() - margin;
  if (!(lo_x < hi_x) || !(lo_y < hi_y)) return std::nullopt;
  for (int i = 0; i < tries; ++i) {
    const Pose2D p(rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y), rng.uniform(-kPi, kPi));
    if (map.point_free(p.x, p.y)) return p;
  }
  return std::nullopt;
}

inline std::optional<TrajectoryRecord> collect_one(const Costmap& map, const VehicleModel& model,
                                                   RRTStarConfig rrt, std::uint64_t task_seed,
                                                   const CollectOptions& opts) {
  Rng rng(task_seed);
  const double margin =
      opts.boundary_margin >= 0.0 ? opts.boundary_margin : 1.25 * model.min_turn_radius();
  std::optional<Pose2D> start, goal;
  for (int attempt = 0; attempt < opts.max_pair_tries; ++attempt) {
    start = sample_free_pose(map, rng, margin);
    goal = sample_free_pose(map, rng, margin);
    if (!start || !goal) return std::nullopt;
    const double d = position_distance(*start, *goal);
    if (d >= opts.min_pair_distance && d <= opts.max_pair_distance) break;
    start.reset();
  }
  if (!start || !goal) return std::nullopt;
  rrt.rng_seed = derive_seed(task_seed, 1);
  const auto traj = plan_rrtstar(*start, *goal, map, model, rrt);
  if (!traj) return std::nullopt;
  TrajectoryRecord rec;
  rec.map_id = map.id;
  rec.poses = resample_poses(*traj, opts.resample_spacing);
  rec.source_seed = task_seed;
  if (rec.poses.size() < 2) return std::nullopt;
  return rec;
}

}  // namespace detail

/// Samples start/goal pairs across the maps and keeps the expert paths the
/// planner solves. Every task owns a seed derived from (seed, task index), so
/// the result is a pure function of the inputs no matter how many workers
/// run. Records come back sorted by (map_id, source_seed).
inline std::vector<TrajectoryRecord> collect(const std::vector<Costmap>& maps, int n_trajectories,
                                             const VehicleModel& model, const RRTStarConfig& rrt,
                                             std::uint64_t seed, int workers,
                                             const CollectOptions& opts = {}) {
  if (n_trajectories < 0) throw std::invalid_argument("collect: negative trajectory count");
  if (workers < 1) throw std::invalid_argument("collect: need at least one worker");
  if (maps.empty()) throw std::invalid_argument("collect: no maps");
  for (const Costmap& m : maps) {
    int free = 0;
    for (std::uint8_t c : m.cells) {
      if (c < kCollisionThreshold && ++free >= 2) break;
    }
    if (free < 2) throw std::invalid_argument("collect: map '" + m.id + "' has < 2 free cells");
  }

  const auto n = static_cast<std::size_t>(n_trajectories);
  std::vector<std::optional<TrajectoryRecord>> results(n);
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      const Costmap& map = maps[i % maps.size()];
      results[i] = detail::collect_one(map, model, rrt, derive_seed(seed, i), opts);
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  std::vector<TrajectoryRecord> records;
  for (auto& r : results) {
    if (r) records.push_back(std::move(*r));
  }
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return a.map_id != b.map_id ? a.map_id < b.map_id : a.source_seed < b.source_seed;
  });
  return records;
}

// ---------------------------------------------------------------------------
// Augmentation and encoding
// ---------------------------------------------------------------------------

/// Emits every contiguous sub-path (i, j) with j - i >= 2 whose bounding box
/// fits one local costmap window of side `window_m`. Sub-paths inherit the
/// parent's map and seed; enumeration order is (i, then j), so output order
/// is deterministic.
inline std::vector<TrajectoryRecord> augment(const TrajectoryRecord& record, double window_m) {
  std::vector<TrajectoryRecord> out;
  const auto n = record.poses.size();
  if (n < 3) return out;
  for (std::size_t i = 0; i + 2 < n; ++i) {
    double min_x = record.poses[i].x, max_x = min_x;
    double min_y = record.poses[i].y, max_y = min_y;
    for (std::size_t j = i + 1; j < n; ++j) {
      min_x = std::min(min_x, record.poses[j].x);
      max_x = std::max(max_x, record.poses[j].x);
      min_y = std::min(min_y, record.poses[j].y);
      max_y = std::max(max_y, record.poses[j].y);
      if (j - i < 2) continue;
      if (max_x - min_x > window_m || max_y - min_y > window_m) break;
      TrajectoryRecord sub;
      sub.map_id = record.map_id;
      sub.source_seed = record.source_seed;
      sub.poses.assign(record.poses.begin() + static_cast<std::ptrdiff_t>(i),
                       record.poses.begin() + static_cast<std::ptrdiff_t>(j) + 1);
      out.push_back(std::move(sub));
    }
  }
  return out;
}

/// World pose from a normalized egocentric state vector.
inline Pose2D decode_state(const std::array<double, 4>& v, const Pose2D& center,
                           double half_extent) {
  return Pose2D(center.x + v[0] * half_extent, center.y + v[1] * half_extent,
                std::atan2(v[3], v[2]));
}

namespace detail {

inline std::array<double, 4> encode_state(const Pose2D& p, const Pose2D& center,
                                          double half_extent) {
  return {(p.x - center.x) / half_extent, (p.y - center.y) / half_extent, std::cos(p.theta),
          std::sin(p.theta)};
}

/// Extracts the l x l window of `map` centered on the cell containing `pose`;
/// cells beyond the map are obstacles.
inline Costmap extract_window(const Costmap& map, const Pose2D& pose, int l) {
  const int cx = map.cell_x(pose.x), cy = map.cell_y(pose.y);
  const int x0 = cx - l / 2, y0 = cy - l / 2;
  Costmap win(l, map.resolution,
              Pose2D(map.origin.x + x0 * map.resolution, map.origin.y + y0 * map.resolution, 0.0),
              kLethalCost, map.id);
  for (int iy = 0; iy < l; ++iy) {
    for (int ix = 0; ix < l; ++ix) {
      if (map.cell_in_bounds(x0 + ix, y0 + iy)) win.at(ix, iy) = map.at(x0 + ix, y0 + iy);
    }
  }
  return win;
}

}  // namespace detail

/// Builds the training tuple (s_t, s_T, patch, s_{t+1}) for waypoint t of a
/// record: extract the window around s_t, pad it, re-center it on s_t, and
/// express all states in the translated frame normalized by the padded
/// half-extent l*resolution. Returns nullopt when the goal falls outside the
/// padded window (callers count those skips).
inline std::optional<TrainingTuple> encode_sample(const TrajectoryRecord& record, std::size_t t,
                                                  const Costmap& map, int l) {
  if (t + 1 >= record.poses.size()) {
    throw std::out_of_range("encode_sample: index past the last transition");
  }
  const Pose2D& s_t = record.poses[t];
  const Pose2D& s_goal = record.poses.back();
  const double half_extent = l * map.resolution;
  if (std::abs(s_goal.x - s_t.x) > half_extent || std::abs(s_goal.y - s_t.y) > half_extent) {
    return std::nullopt;
  }
  const Costmap window = detail::extract_window(map, s_t, l);
  const PaddedCostmap ego = transform_egocentric(pad(window), s_t);

  TrainingTuple tuple;
  tuple.current = {0.0, 0.0, std::cos(s_t.theta), std::sin(s_t.theta)};
  tuple.goal = detail::encode_state(s_goal, s_t, half_extent);
  tuple.target = detail::encode_state(record.poses[t + 1], s_t, half_extent);
  tuple.patch = ego.grid.cells;
  return tuple;
}

struct BuildStats {
  std::size_t records_in = 0;
  std::size_t subpaths = 0;
  std::size_t tuples = 0;
  std::size_t skipped_goal_outside = 0;
};

/// Augments every record, encodes every transition, and (optionally)
/// subsamples down to `cap` tuples with a seeded draw that preserves the
/// deterministic ordering.
inline Dataset build_training_set(const std::vector<TrajectoryRecord>& records,
                                  const std::vector<Costmap>& maps, int l, std::size_t cap,
                                  std::uint64_t seed, BuildStats* stats = nullptr) {
  std::map<std::string, const Costmap*> by_id;
  for (const Costmap& m : maps) by_id[m.id] = &m;
  Dataset ds;
  ds.patch_l = l;
  BuildStats local;
  local.records_in = records.size();
  for (const TrajectoryRecord& rec : records) {
    const auto it = by_id.find(rec.map_id);
    if (it == by_id.end()) {
      throw std::invalid_argument("build_training_set: unknown map id " + rec.map_id);
    }
    ds.resolution = it->second->resolution;
    const double window_m = l * it->second->resolution;
    for (const TrajectoryRecord& sub : augment(rec, window_m)) {
      ++local.subpaths;
      for (std::size_t t = 0; t + 1 < sub.poses.size(); ++t) {
        auto tuple = encode_sample(sub, t, *it->second, l);
        if (tuple) {
          ds.tuples.push_back(std::move(*tuple));
        } else {
          ++local.skipped_goal_outside;
        }
      }
    }
  }
  if (cap > 0 && ds.tuples.size() > cap) {
    // Seeded reservoir-style thinning: choose `cap` indices, keep order.
    std::vector<std::size_t> idx(ds.tuples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(seed, 0xDA7Au));
    for (std::size_t i = idx.size() - 1; i > 0; --i) {
      std::swap(idx[i], idx[rng.next_below(i + 1)]);
    }
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    std::vector<TrainingTuple> kept;
    kept.reserve(cap);
    for (std::size_t i : idx) kept.push_back(std::move(ds.tuples[i]));
    ds.tuples = std::move(kept);
  }
  local.tuples = ds.tuples.size();
  if (stats) *stats = local;
  return ds;
}

// ---------------------------------------------------------------------------
// On-disk format (KPDS v1)
// ---------------------------------------------------------------------------
//
// magic "KPDS" | u32 version=1 | u32 l | f32 resolution | u64 tuple count |
// per tuple: 4*f32 current, 4*f32 goal, (2l)^2 u8 raw costs, 4*f32 target |
// u32 CRC32 of all preceding bytes. See docs/formats.md.

inline void save_dataset(const std::string& path, const Dataset& ds) {
  ByteWriter w;
  w.magic("KPDS");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(ds.patch_l));
  w.f32(static_cast<float>(ds.resolution));
  w.u64(ds.tuples.size());
  const auto patch_cells = static_cast<std::size_t>(2 * ds.patch_l) * static_cast<std::size_t>(2 * ds.patch_l);
  for (const TrainingTuple& t : ds.tuples) {
    if (t.patch.size() != patch_cells) {
      throw IoError(IoError::Kind::BadData, "save_dataset: patch size mismatch");
    }
    for (double v : t.current) w.f32(static_cast<float>(v));
    for (double v : t.goal) w.f32(static_cast<float>(v));
    w.bytes(t.patch);
    for (double v : t.target) w.f32(static_cast<float>(v));
  }
  w.finish_to_file(path);
}

inline Dataset load_dataset(const std::string& path) {
  ByteReader r = ByteReader::from_file(path);
  r.expect_magic("KPDS");
  const std::uint32_t version = r.u32();
  if (version != 1) {
    throw IoError(IoError::Kind::VersionMismatch,
                  path + ": unsupported dataset version " + std::to_string(version));
  }
  Dataset ds;
  ds.patch_l = static_cast<int>(r.u32());
  if (ds.patch_l <= 0 || ds.patch_l > 4096) {
    throw IoError(IoError::Kind::BadData, path + ": implausible window size");
  }
  ds.resolution = r.f32();
  const std::uint64_t count = r.u64();
  const auto patch_cells = static_cast<std::size_t>(2 * ds.patch_l) * static_cast<std::size_t>(2 * ds.patch_l);
  ds.tuples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    TrainingTuple t;
    for (double& v : t.current) v = r.f32();
    for (double& v : t.goal) v = r.f32();
    t.patch = r.bytes(patch_cells);
    for (double& v : t.target) v = r.f32();
    ds.tuples.push_back(std::move(t));
  }
  r.expect_done();
  return ds;
}

}  // namespace kinoplan
