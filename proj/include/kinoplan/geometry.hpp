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
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace kinoplan {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

/// Wraps an angle into [-pi, pi).
inline double wrap_angle(double a) {
  double w = std::fmod(a + kPi, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  return w - kPi;
}

/// Wraps an angle into [0, 2*pi).
inline double mod2pi(double a) {
  double w = std::fmod(a, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  return w;
}

inline bool is_finite(double v) { return std::isfinite(v); }

/// Planar vehicle state (x, y, heading). The heading is wrapped into
/// [-pi, pi) on construction; all fields must be finite.
struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Pose2D() = default;
  Pose2D(double x_, double y_, double theta_) : x(x_), y(y_), theta(wrap_angle(theta_)) {
    if (!is_finite(x) || !is_finite(y) || !is_finite(theta)) {
      throw std::invalid_argument("Pose2D: non-finite component");
    }
  }

  bool operator==(const Pose2D& o) const { return x == o.x && y == o.y && theta == o.theta; }
};

inline double position_distance(const Pose2D& a, const Pose2D& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

inline double heading_distance(const Pose2D& a, const Pose2D& b) {
  return std::abs(wrap_angle(a.theta - b.theta));
}

/// Forward-only car with fixed speed, rear-to-front axle distance and a
/// symmetric steering limit. Minimum turning radius is wheelbase/tan(max_steer).
struct VehicleModel {
  double speed_vs = 0.5;       // m/s, constant forward speed
  double wheelbase_d = 0.3;    // m
  double max_steer_phi = 0.7;  // rad, in (0, pi/2)

  VehicleModel() = default;
  VehicleModel(double speed, double wheelbase, double max_steer)
      : speed_vs(speed), wheelbase_d(wheelbase), max_steer_phi(max_steer) {
    validate();
  }

  void validate() const {
    if (!(speed_vs > 0.0) || !is_finite(speed_vs)) {
      throw std::invalid_argument("VehicleModel: speed must be positive");
    }
    if (!(wheelbase_d > 0.0) || !is_finite(wheelbase_d)) {
      throw std::invalid_argument("VehicleModel: wheelbase must be positive");
    }
    if (!(max_steer_phi > 0.0) || !(max_steer_phi < kPi / 2.0)) {
      throw std::invalid_argument("VehicleModel: max steer must be in (0, pi/2)");
    }
  }

  double min_turn_radius() const { return wheelbase_d / std::tan(max_steer_phi); }
};

namespace detail {

struct StateDeriv {
  double dx, dy, dtheta;
};

inline StateDeriv car_dynamics(double theta, double v, double omega) {
  return {v * std::cos(theta), v * std::sin(theta), omega};
}

}  // namespace detail

/// Advances the state by one fixed RK4 step of length dt under constant
/// steering angle phi. Heading rate is v/d * tan(phi).
inline Pose2D integrate_kinematics(const Pose2D& pose, const VehicleModel& model, double phi,
                                   double dt) {
  if (!is_finite(phi) || !is_finite(dt)) {
    throw std::invalid_argument("integrate_kinematics: non-finite input");
  }
  if (!(dt > 0.0)) {
    throw std::invalid_argument("integrate_kinematics: dt must be positive");
  }
  if (std::abs(phi) > model.max_steer_phi + 1e-12) {
    throw std::invalid_argument("integrate_kinematics: steering beyond limit");
  }
  const double v = model.speed_vs;
  const double omega = v / model.wheelbase_d * std::tan(phi);

  const auto k1 = detail::car_dynamics(pose.theta, v, omega);
  const auto k2 = detail::car_dynamics(pose.theta + 0.5 * dt * k1.dtheta, v, omega);
  const auto k3 = detail::car_dynamics(pose.theta + 0.5 * dt * k2.dtheta, v, omega);
  const auto k4 = detail::car_dynamics(pose.theta + dt * k3.dtheta, v, omega);

  return Pose2D(pose.x + dt / 6.0 * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx),
                pose.y + dt / 6.0 * (k1.dy + 2.0 * k2.dy + 2.0 * k3.dy + k4.dy),
                pose.theta + dt * omega);
}

/// Repeated RK4 steps covering `duration` (a shorter final step absorbs the
/// remainder).
inline Pose2D integrate_for(Pose2D pose, const VehicleModel& model, double phi, double duration,
                            double dt = 0.02) {
  if (!(duration >= 0.0)) throw std::invalid_argument("integrate_for: negative duration");
  double remaining = duration;
  while (remaining > 1e-12) {
    const double step = std::min(dt, remaining);
    pose = integrate_kinematics(pose, model, phi, step);
    remaining -= step;
  }
  return pose;
}

// ---------------------------------------------------------------------------
// Dubins shortest paths
// ---------------------------------------------------------------------------

enum class DubinsWord : int { LSL = 0, RSR = 1, LSR = 2, RSL = 3, RLR = 4, LRL = 5 };

inline const char* to_string(DubinsWord w) {
  switch (w) {
    case DubinsWord::LSL: return "LSL";
    case DubinsWord::RSR: return "RSR";
    case DubinsWord::LSR: return "LSR";
    case DubinsWord::RSL: return "RSL";
    case DubinsWord::RLR: return "RLR";
    case DubinsWord::LRL: return "LRL";
  }
  return "???";
}

/// Segment letters for a word, index 0..2. 'L' and 'R' are arcs, 'S' straight.
inline std::array<char, 3> word_segments(DubinsWord w) {
  switch (w) {
    case DubinsWord::LSL: return {'L', 'S', 'L'};
    case DubinsWord::RSR: return {'R', 'S', 'R'};
    case DubinsWord::LSR: return {'L', 'S', 'R'};
    case DubinsWord::RSL: return {'R', 'S', 'L'};
    case DubinsWord::RLR: return {'R', 'L', 'R'};
    case DubinsWord::LRL: return {'L', 'R', 'L'};
  }
  return {'?', '?', '?'};
}

/// Advances a pose along a single constant-curvature segment.
/// For arcs, `param` is the swept angle in radians (negative values walk
/// backwards); for straights it is the signed length in meters.
inline Pose2D propagate_segment(const Pose2D& p, char kind, double param, double rho) {
  if (kind == 'S') {
    return Pose2D(p.x + param * std::cos(p.theta), p.y + param * std::sin(p.theta), p.theta);
  }
  const double dir = (kind == 'L') ? 1.0 : -1.0;
  const double th1 = p.theta + dir * param;
  return Pose2D(p.x + dir * rho * (std::sin(th1) - std::sin(p.theta)),
                p.y - dir * rho * (std::cos(th1) - std::cos(p.theta)), th1);
}

/// One of the six arc/straight/arc steering curves between two oriented poses.
/// Arc parameters are stored in radians and the straight parameter in meters,
/// so length() = rho * (sum of arcs) + straight.
struct DubinsPath {
  DubinsWord word = DubinsWord::LSL;
  std::array<double, 3> seg_param = {0.0, 0.0, 0.0};
  double rho = 1.0;
  Pose2D start;
  Pose2D end;

  double segment_length(int i) const {
    const char kind = word_segments(word)[static_cast<std::size_t>(i)];
    return kind == 'S' ? seg_param[static_cast<std::size_t>(i)]
                       : rho * seg_param[static_cast<std::size_t>(i)];
  }

  double length() const { return segment_length(0) + segment_length(1) + segment_length(2); }
};

namespace detail {

// Per-word solutions of the normalized Dubins problem: start (0,0,alpha),
// goal (d,0,beta), unit turning radius. Arc parameters come out in radians
// and the straight parameter in multiples of rho. Returns false when the
// word admits no solution for this configuration.
struct WordParams {
  double t, p, q;
  bool ok = false;
};

// Arc angles that should be exactly zero can land a hair below 0 and wrap to
// 2*pi, turning a degenerate arc into a full circle; snap those back.
inline double snap_mod2pi(double a) {
  const double w = mod2pi(a);
  return (w >= kTwoPi - 5e-11) ? 0.0 : w;
}

inline WordParams dubins_lsl(double alpha, double beta, double d) {
  const double sa = std::sin(alpha), sb = std::sin(beta);
  const double ca = std::cos(alpha), cb = std::cos(beta);
  const double c_ab = std::cos(alpha - beta);
  const double p_sq = 2.0 + d * d - 2.0 * c_ab + 2.0 * d * (sa - sb);
  if (p_sq < -1e-12) return {};
  const double tmp = std::atan2(cb - ca, d + sa - sb);
  return {snap_mod2pi(-alpha + tmp), std::sqrt(std::max(0.0, p_sq)), snap_mod2pi(beta - tmp), true};
}

inline WordParams dubins_rsr(double alpha, double beta, double d) {
  const double sa = std::sin(alpha), sb = std::sin(beta);
  const double ca = std::cos(alpha), cb = std::cos(beta);
  const double c_ab = std::cos(alpha - beta);
  const double p_sq = 2.0 + d * d - 2.0 * c_ab + 2.0 * d * (sb - sa);
  if (p_sq < -1e-12) return {};
  const double tmp = std::atan2(ca - cb, d - sa + sb);
  return {snap_mod2pi(alpha - tmp), std::sqrt(std::max(0.0, p_sq)), snap_mod2pi(-beta + tmp), true};
}

inline WordParams dubins_lsr(double alpha, double beta, double d) {
  const double sa = std::sin(alpha), sb = std::sin(beta);
  const double ca = std::cos(alpha), cb = std::cos(beta);
  const double c_ab = std::cos(alpha - beta);
  const double p_sq = -2.0 + d * d + 2.0 * c_ab + 2.0 * d * (sa + sb);
  if (p_sq < -1e-12) return {};
  const double p = std::sqrt(std::max(0.0, p_sq));
  const double tmp = std::atan2(-ca - cb, d + sa + sb) - std::atan2(-2.0, p);
  return {snap_mod2pi(-alpha + tmp), p, snap_mod2pi(-snap_mod2pi(beta) + tmp), true};
}

inline WordParams dubins_rsl(double alpha, double beta, double d) {
  const double sa = std::sin(alpha), sb = std::sin(beta);
  const double ca = std::cos(alpha), cb = std::cos(beta);
  const double c_ab = std::cos(alpha - beta);
  const double p_sq = -2.0 + d * d + 2.0 * c_ab - 2.0 * d * (sa + sb);
  if (p_sq < -1e-12) return {};
  const double p = std::sqrt(std::max(0.0, p_sq));
  const double tmp = std::atan2(ca + cb, d - sa - sb) - std::atan2(2.0, p);
  return {snap_mod2pi(alpha - tmp), p, snap_mod2pi(beta - tmp), true};
}

inline WordParams dubins_rlr(double alpha, double beta, double d) {
  const double sa = std::sin(alpha), sb = std::sin(beta);
  const double ca = std::cos(alpha), cb = std::cos(beta);
  const double c_ab = std::cos(alpha - beta);
  const double tmp = (6.0 - d * d + 2.0 * c_ab + 2.0 * d * (sa - sb)) / 8.0;
  if (std::abs(tmp) > 1.0 + 1e-12) return {};
  const double p = snap_mod2pi(kTwoPi - std::acos(std::clamp(tmp, -1.0, 1.0)));
  const double t = snap_mod2pi(alpha - std::atan2(ca - cb, d - sa + sb) + snap_mod2pi(p / 2.0));
  const double q = snap_mod2pi(alpha - beta - t + snap_mod2pi(p));
  return {t, p, q, true};
}

inline WordParams dubins_lrl(double alpha, double beta, double d) {
  const double sa = std::sin(alpha), sb = std::sin(beta);
  const double ca = std::cos(alpha), cb = std::cos(beta);
  const double c_ab = std::cos(alpha - beta);
  const double tmp = (6.0 - d * d + 2.0 * c_ab + 2.0 * d * (sb - sa)) / 8.0;
  if (std::abs(tmp) > 1.0 + 1e-12) return {};
  const double p = snap_mod2pi(kTwoPi - std::acos(std::clamp(tmp, -1.0, 1.0)));
  const double t = snap_mod2pi(-alpha - std::atan2(ca - cb, d + sa - sb) + p / 2.0);
  const double q = snap_mod2pi(snap_mod2pi(beta) - alpha - t + snap_mod2pi(p));
  return {t, p, q, true};
}

inline WordParams solve_word(DubinsWord w, double alpha, double beta, double d) {
  switch (w) {
    case DubinsWord::LSL: return dubins_lsl(alpha, beta, d);
    case DubinsWord::RSR: return dubins_rsr(alpha, beta, d);
    case DubinsWord::LSR: return dubins_lsr(alpha, beta, d);
    case DubinsWord::RSL: return dubins_rsl(alpha, beta, d);
    case DubinsWord::RLR: return dubins_rlr(alpha, beta, d);
    case DubinsWord::LRL: return dubins_lrl(alpha, beta, d);
  }
  return {};
}

}  // namespace detail

/// Shortest curvature-bounded path between two oriented poses. Ties between
/// equal-length words break toward the lower enum value, so results are
/// deterministic. from == to yields a zero-length path.
inline DubinsPath dubins_shortest(const Pose2D& from, const Pose2D& to, double rho) {
  if (!(rho > 0.0) || !is_finite(rho)) {
    throw std::invalid_argument("dubins_shortest: rho must be positive");
  }
  const double dx = to.x - from.x;
  const double dy = to.y - from.y;
  const double dist = std::hypot(dx, dy);
  const double d = dist / rho;
  const double phi = (dist > 0.0) ? std::atan2(dy, dx) : 0.0;
  const double alpha = mod2pi(from.theta - phi);
  const double beta = mod2pi(to.theta - phi);

  DubinsPath best;
  best.rho = rho;
  best.start = from;
  best.end = to;
  double best_norm = std::numeric_limits<double>::infinity();
  auto consider = [&](DubinsWord w, double t, double p_norm, double q, bool ccc) {
    const double norm_len = t + p_norm + q;
    if (norm_len < best_norm) {
      best_norm = norm_len;
      best.word = w;
      best.seg_param = {t, ccc ? p_norm : p_norm * rho, q};
    }
  };
  // When both poses sit on one turning circle the CSC formulas degenerate
  // (the straight direction is pure roundoff and can cost an extra turn), so
  // feed the plain arc connection explicitly alongside each word.
  auto same_circle_arc = [&](DubinsWord w, double dir) {
    const double acx = from.x - dir * rho * std::sin(from.theta);
    const double acy = from.y + dir * rho * std::cos(from.theta);
    const double bcx = to.x - dir * rho * std::sin(to.theta);
    const double bcy = to.y + dir * rho * std::cos(to.theta);
    if (std::hypot(acx - bcx, acy - bcy) < 1e-9 * std::max(1.0, rho)) {
      consider(w, mod2pi(dir * (to.theta - from.theta)), 0.0, 0.0, false);
    }
  };
  constexpr std::array<DubinsWord, 6> kWords = {DubinsWord::LSL, DubinsWord::RSR, DubinsWord::LSR,
                                                DubinsWord::RSL, DubinsWord::RLR, DubinsWord::LRL};
  for (DubinsWord w : kWords) {
    const auto sol = detail::solve_word(w, alpha, beta, d);
    if (sol.ok) {
      consider(w, sol.t, sol.p, sol.q, w == DubinsWord::RLR || w == DubinsWord::LRL);
    }
    if (w == DubinsWord::LSL) same_circle_arc(w, 1.0);
    if (w == DubinsWord::RSR) same_circle_arc(w, -1.0);
  }
  if (!std::isfinite(best_norm)) {
    // Identical poses: the loop above always finds LSL with d > 0, so this
    // only happens in the exact from == to case.
    best.word = DubinsWord::LSL;
    best.seg_param = {0.0, 0.0, 0.0};
  }
  return best;
}

/// Pose at arc-length position s along the path, s clamped to [0, length].
/// s == length returns the stored end pose exactly.
inline Pose2D dubins_pose_at(const DubinsPath& path, double s) {
  const double total = path.length();
  if (s >= total) return path.end;
  if (s <= 0.0) return path.start;
  const auto kinds = word_segments(path.word);
  Pose2D p = path.start;
  for (int i = 0; i < 3; ++i) {
    const double seg_len = path.segment_length(i);
    if (s <= seg_len || i == 2) {
      const char kind = kinds[static_cast<std::size_t>(i)];
      const double param = (kind == 'S') ? s : s / path.rho;
      return propagate_segment(p, kind, param, path.rho);
    }
    p = propagate_segment(p, kinds[static_cast<std::size_t>(i)],
                          path.seg_param[static_cast<std::size_t>(i)], path.rho);
    s -= seg_len;
  }
  return p;
}

/// Poses spaced at most `step` apart in arc length. The first sample is the
/// start pose and the last is the end pose exactly; a zero-length path yields
/// just the start pose.
inline std::vector<Pose2D> sample_dubins(const DubinsPath& path, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("sample_dubins: step must be positive");
  const double total = path.length();
  if (total <= 1e-12) return {path.start};
  const auto n = static_cast<std::size_t>(std::ceil(total / step - 1e-9));
  std::vector<Pose2D> out;
  out.reserve(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(dubins_pose_at(path, total * static_cast<double>(i) / static_cast<double>(n)));
  }
  out.push_back(path.end);
  return out;
}

/// A planned path: densely sampled poses plus the steering segments that
/// generated them. total_length is the sum of segment lengths.
struct Trajectory {
  std::vector<Pose2D> poses;
  std::vector<DubinsPath> segments;
  double total_length = 0.0;

  bool empty() const { return poses.empty(); }

  /// Appends another trajectory whose first pose coincides with our last.
  void append(const Trajectory& other) {
    if (other.poses.empty()) return;
    std::size_t skip = 0;
    if (!poses.empty() && poses.back() == other.poses.front()) skip = 1;
    poses.insert(poses.end(), other.poses.begin() + static_cast<std::ptrdiff_t>(skip),
                 other.poses.end());
    segments.insert(segments.end(), other.segments.begin(), other.segments.end());
    total_length += other.total_length;
  }
};

/// Pose at arc length s along a trajectory's steering segments.
inline Pose2D trajectory_pose_at(const Trajectory& traj, double s) {
  if (traj.segments.empty()) {
    if (traj.poses.empty()) throw std::invalid_argument("trajectory_pose_at: empty trajectory");
    return s <= 0.0 ? traj.poses.front() : traj.poses.back();
  }
  for (const DubinsPath& seg : traj.segments) {
    const double len = seg.length();
    if (s <= len) return dubins_pose_at(seg, s);
    s -= len;
  }
  return traj.segments.back().end;
}

/// Arc-length resampling to near-uniform spacing. Endpoints are preserved
/// exactly; a trajectory shorter than the spacing degenerates to its two
/// endpoints, and a zero-length one to a single pose.
inline std::vector<Pose2D> resample_poses(const Trajectory& traj, double spacing) {
  if (!(spacing > 0.0)) throw std::invalid_argument("resample_poses: spacing must be positive");
  if (traj.poses.empty()) return {};
  const double total = traj.total_length;
  if (total <= 1e-12 || traj.segments.empty()) return {traj.poses.front()};
  const int n = std::max(1, static_cast<int>(std::llround(total / spacing)));
  std::vector<Pose2D> out;
  out.reserve(static_cast<std::size_t>(n) + 1);
  out.push_back(traj.segments.front().start);
  for (int i = 1; i < n; ++i) out.push_back(trajectory_pose_at(traj, total * i / n));
  out.push_back(traj.segments.back().end);
  return out;
}

}  // namespace kinoplan
