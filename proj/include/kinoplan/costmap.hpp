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
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kinoplan/geometry.hpp"

namespace kinoplan {

inline constexpr std::uint8_t kLethalCost = 255;
inline constexpr std::uint8_t kCollisionThreshold = 128;  // >= is blocked
inline constexpr std::uint8_t kInflatedCost = 225;

struct MapFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Square occupancy-cost grid. Cell (ix, iy) covers the world rectangle
/// [origin + ix*res, origin + (ix+1)*res) x [.. iy ..); the grid axes are
/// world-aligned (the origin pose carries translation only). Costs >= 128
/// count as in-collision for a point check; 255 is a hard obstacle.
struct Costmap {
  int size_l = 0;
  double resolution = 0.1;
  Pose2D origin;
  std::vector<std::uint8_t> cells;
  std::string id;

  Costmap() = default;
  Costmap(int l, double res, Pose2D org, std::uint8_t fill = 0, std::string map_id = "")
      : size_l(l), resolution(res), origin(org), cells(static_cast<std::size_t>(l) * l, fill),
        id(std::move(map_id)) {
    if (l <= 0) throw std::invalid_argument("Costmap: size must be positive");
    if (!(res > 0.0)) throw std::invalid_argument("Costmap: resolution must be positive");
  }

  std::uint8_t at(int ix, int iy) const {
    return cells[static_cast<std::size_t>(iy) * static_cast<std::size_t>(size_l) +
                 static_cast<std::size_t>(ix)];
  }
  std::uint8_t& at(int ix, int iy) {
    return cells[static_cast<std::size_t>(iy) * static_cast<std::size_t>(size_l) +
                 static_cast<std::size_t>(ix)];
  }

  bool cell_in_bounds(int ix, int iy) const {
    return ix >= 0 && iy >= 0 && ix < size_l && iy < size_l;
  }

  int cell_of(double world, double org) const {
    return static_cast<int>(std::floor((world - org) / resolution));
  }
  int cell_x(double wx) const { return cell_of(wx, origin.x); }
  int cell_y(double wy) const { return cell_of(wy, origin.y); }

  double center_x(int ix) const { return origin.x + (ix + 0.5) * resolution; }
  double center_y(int iy) const { return origin.y + (iy + 0.5) * resolution; }

  bool contains(double wx, double wy) const {
    return wx >= origin.x && wy >= origin.y && wx < origin.x + size_l * resolution &&
           wy < origin.y + size_l * resolution;
  }

  /// Point collision check: blocked outside the map or on a cell >= threshold.
  bool point_free(double wx, double wy) const {
    const int ix = cell_x(wx), iy = cell_y(wy);
    return cell_in_bounds(ix, iy) && at(ix, iy) < kCollisionThreshold;
  }

  double width_m() const { return size_l * resolution; }
};

/// Circumscribed robot disk used for footprint collision checks.
struct Footprint {
  double inflation_radius = 0.15;  // m, >= 0
};

/// True iff every cell overlapped by the robot disk at `pose` is traversable.
/// Poses outside the map, or whose disk pokes beyond the map edge, collide.
inline bool is_collision_free(const Costmap& map, const Pose2D& pose, const Footprint& fp) {
  if (!map.contains(pose.x, pose.y)) return false;
  const double r = std::max(0.0, fp.inflation_radius);
  const int x0 = map.cell_x(pose.x - r), x1 = map.cell_x(pose.x + r);
  const int y0 = map.cell_y(pose.y - r), y1 = map.cell_y(pose.y + r);
  for (int iy = y0; iy <= y1; ++iy) {
    for (int ix = x0; ix <= x1; ++ix) {
      // Distance from the pose to the cell rectangle.
      const double cx0 = map.origin.x + ix * map.resolution;
      const double cy0 = map.origin.y + iy * map.resolution;
      const double dx = std::max({cx0 - pose.x, 0.0, pose.x - (cx0 + map.resolution)});
      const double dy = std::max({cy0 - pose.y, 0.0, pose.y - (cy0 + map.resolution)});
      if (dx * dx + dy * dy > r * r) continue;
      if (!map.cell_in_bounds(ix, iy)) return false;
      if (map.at(ix, iy) >= kCollisionThreshold) return false;
    }
  }
  return true;
}

/// Marks every cell within `radius` of a hard obstacle as blocked, producing
/// the planning map the point checks run against.
inline Costmap inflate(const Costmap& map, double radius) {
  Costmap out = map;
  if (radius <= 0.0) return out;
  const int rc = static_cast<int>(std::ceil(radius / map.resolution));
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -rc; dy <= rc; ++dy) {
    for (int dx = -rc; dx <= rc; ++dx) {
      const double d = std::hypot(dx * map.resolution, dy * map.resolution);
      if (d <= radius) offsets.emplace_back(dx, dy);
    }
  }
  for (int iy = 0; iy < map.size_l; ++iy) {
    for (int ix = 0; ix < map.size_l; ++ix) {
      if (map.at(ix, iy) != kLethalCost) continue;
      for (const auto& [dx, dy] : offsets) {
        const int jx = ix + dx, jy = iy + dy;
        if (map.cell_in_bounds(jx, jy)) {
          out.at(jx, jy) = std::max(out.at(jx, jy), kInflatedCost);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Padded egocentric grids
// ---------------------------------------------------------------------------

/// A 2l x 2l grid produced by padding an l x l source map with obstacles and
/// translating it so a chosen pose sits on the center cell. The source map is
/// retained so successive transforms recompute from it instead of composing.
struct PaddedCostmap {
  Costmap grid;        // 2l x 2l
  Costmap source;      // original l x l map
  Pose2D center_pose;  // world pose currently mapped to the center cell

  const std::string& source_id() const { return source.id; }
};

/// Embeds the source grid in the center block of a 2l x 2l grid; every padded
/// cell is a hard obstacle so the planner never routes through unseen space.
inline PaddedCostmap pad(const Costmap& map) {
  const int l = map.size_l;
  const int off = l / 2;
  PaddedCostmap out;
  out.source = map;
  out.grid = Costmap(2 * l, map.resolution,
                     Pose2D(map.origin.x - off * map.resolution,
                            map.origin.y - off * map.resolution, 0.0),
                     kLethalCost, map.id);
  for (int iy = 0; iy < l; ++iy) {
    for (int ix = 0; ix < l; ++ix) {
      out.grid.at(ix + off, iy + off) = map.at(ix, iy);
    }
  }
  out.center_pose = Pose2D(map.origin.x + 0.5 * l * map.resolution,
                           map.origin.y + 0.5 * l * map.resolution, 0.0);
  return out;
}

/// Re-centers the padded grid on `pose` by an integer-cell translation of the
/// source map (no rotation). Throws std::out_of_range when the pose has left
/// the source map, which signals planner divergence to the caller.
inline PaddedCostmap transform_egocentric(const PaddedCostmap& padded, const Pose2D& pose) {
  const Costmap& src = padded.source;
  const int l = src.size_l;
  const int px = src.cell_x(pose.x);
  const int py = src.cell_y(pose.y);
  if (!src.cell_in_bounds(px, py)) {
    throw std::out_of_range("transform_egocentric: pose outside source map");
  }
  const int sx = l - px;  // source cell (px,py) lands on center cell (l,l)
  const int sy = l - py;
  PaddedCostmap out;
  out.source = src;
  out.grid = Costmap(2 * l, src.resolution,
                     Pose2D(src.origin.x - sx * src.resolution,
                            src.origin.y - sy * src.resolution, 0.0),
                     kLethalCost, src.id);
  for (int iy = 0; iy < l; ++iy) {
    const int gy = iy + sy;
    if (gy < 0 || gy >= 2 * l) continue;
    for (int ix = 0; ix < l; ++ix) {
      const int gx = ix + sx;
      if (gx < 0 || gx >= 2 * l) continue;
      out.grid.at(gx, gy) = src.at(ix, iy);
    }
  }
  out.center_pose = pose;
  return out;
}

// ---------------------------------------------------------------------------
// Steering
// ---------------------------------------------------------------------------

namespace detail {

/// Collision check along a Dubins path. Walks samples at a spacing no coarser
/// than a quarter cell and checks every grid cell the sampled polyline
/// traverses; on diagonal transitions the crossing order decides which corner
/// cell the segment actually passes through.
inline bool dubins_path_free(const DubinsPath& path, const Costmap& map, double spacing) {
  const double fine = std::min(spacing, 0.25 * map.resolution);
  const double total = path.length();
  const int n = std::max(1, static_cast<int>(std::ceil(total / fine)));
  auto blocked = [&](int ix, int iy) {
    return !map.cell_in_bounds(ix, iy) || map.at(ix, iy) >= kCollisionThreshold;
  };
  int prev_ix = 0, prev_iy = 0;
  double prev_x = 0.0, prev_y = 0.0;
  for (int i = 0; i <= n; ++i) {
    const Pose2D p = dubins_pose_at(path, total * i / n);
    const int ix = map.cell_x(p.x), iy = map.cell_y(p.y);
    if (blocked(ix, iy)) return false;
    if (i > 0 && ix != prev_ix && iy != prev_iy) {
      // The step spacing keeps index deltas within one cell, so the chord
      // crosses exactly one corner-adjacent cell: the one entered first.
      const double xb = map.origin.x + std::max(ix, prev_ix) * map.resolution;
      const double yb = map.origin.y + std::max(iy, prev_iy) * map.resolution;
      const double tx = (xb - prev_x) / (p.x - prev_x);
      const double ty = (yb - prev_y) / (p.y - prev_y);
      if (tx < ty ? blocked(ix, prev_iy) : blocked(prev_ix, iy)) return false;
    }
    prev_ix = ix;
    prev_iy = iy;
    prev_x = p.x;
    prev_y = p.y;
  }
  return true;
}

}  // namespace detail

/// Exact steering primitive: the shortest Dubins connection from -> to if it
/// is no longer than max_length and collision-free on the map. Returns an
/// empty optional otherwise; that is the defined failure mode, not an error.
inline std::optional<Trajectory> steer(const Pose2D& from, const Pose2D& to, const Costmap& map,
                                       const VehicleModel& model, double max_length, double step) {
  if (!(max_length > 0.0) || !(step > 0.0)) {
    throw std::invalid_argument("steer: max_length and step must be positive");
  }
  const DubinsPath path = dubins_shortest(from, to, model.min_turn_radius());
  const double len = path.length();
  if (len > max_length) return std::nullopt;
  if (!detail::dubins_path_free(path, map, step)) return std::nullopt;
  Trajectory traj;
  traj.poses = sample_dubins(path, step);
  traj.segments = {path};
  traj.total_length = len;
  return traj;
}

// ---------------------------------------------------------------------------
// Text map format
// ---------------------------------------------------------------------------
//
// Line 1: "costmap v1 <l> <resolution_m> <origin_x> <origin_y>",
// then l rows of l characters, top row (iy = l-1) first:
//   '.' -> 0, '#' -> 255, '1'..'9' -> 25 * digit.

inline Costmap parse_costmap(std::istream& in, const std::string& name = "") {
  std::string line;
  if (!std::getline(in, line)) throw MapFormatError("costmap: empty input");
  std::istringstream header(line);
  std::string tag, version;
  int l = 0;
  double res = 0.0, ox = 0.0, oy = 0.0;
  header >> tag >> version >> l >> res >> ox >> oy;
  if (header.fail() || tag != "costmap" || version != "v1") {
    throw MapFormatError("costmap: bad header: " + line);
  }
  if (l <= 0 || !(res > 0.0)) throw MapFormatError("costmap: bad dimensions");
  Costmap map(l, res, Pose2D(ox, oy, 0.0), 0, name);
  for (int row = 0; row < l; ++row) {
    if (!std::getline(in, line)) throw MapFormatError("costmap: missing rows");
    if (static_cast<int>(line.size()) != l) {
      throw MapFormatError("costmap: ragged row " + std::to_string(row));
    }
    const int iy = l - 1 - row;  // file shows +y up
    for (int ix = 0; ix < l; ++ix) {
      const char c = line[static_cast<std::size_t>(ix)];
      std::uint8_t cost = 0;
      if (c == '.') {
        cost = 0;
      } else if (c == '#') {
        cost = kLethalCost;
      } else if (c >= '1' && c <= '9') {
        cost = static_cast<std::uint8_t>(25 * (c - '0'));
      } else {
        throw MapFormatError(std::string("costmap: unknown cell char '") + c + "'");
      }
      map.at(ix, iy) = cost;
    }
  }
  return map;
}

inline Costmap load_costmap(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MapFormatError("costmap: cannot open " + path);
  return parse_costmap(in, path);
}

inline void write_costmap(std::ostream& out, const Costmap& map) {
  out << "costmap v1 " << map.size_l << " " << map.resolution << " " << map.origin.x << " "
      << map.origin.y << "\n";
  for (int row = 0; row < map.size_l; ++row) {
    const int iy = map.size_l - 1 - row;
    for (int ix = 0; ix < map.size_l; ++ix) {
      const std::uint8_t v = map.at(ix, iy);
      if (v == 0) {
        out << '.';
      } else if (v == kLethalCost) {
        out << '#';
      } else if (v % 25 == 0 && v / 25 >= 1 && v / 25 <= 9) {
        out << static_cast<char>('0' + v / 25);
      } else {
        throw std::invalid_argument("costmap: value not representable in text format");
      }
    }
    out << "\n";
  }
}

inline void save_costmap(const std::string& path, const Costmap& map) {
  std::ofstream out(path);
  if (!out) throw MapFormatError("costmap: cannot write " + path);
  write_costmap(out, map);
}

}  // namespace kinoplan
