#pragma once

// Expert demonstrator: exact centerline following with a jerk-limited
// longitudinal profile. Candidate speed plans (hold / brake-late / slow /
// full stop) are scored with the real scorer and the best feasible plan wins;
// if nothing makes feasible progress the expert stops.

#include <algorithm>
#include <cmath>
#include <vector>

#include "microdrive/geometry.hpp"
#include "microdrive/rollout.hpp"
#include "microdrive/scene.hpp"
#include "microdrive/scorer.hpp"

namespace microdrive {

// Comfort-safe planning caps under the rollout finite-difference scheme:
// per-step speed change 1.5 m/s -> accel 3 m/s^2, per-step accel change
// 0.3 m/s per step -> jerk 6 m/s^3.
inline constexpr double kExpertMaxDv = 1.5;
inline constexpr double kExpertMaxDdv = 0.3;
inline constexpr double kExpertStopMargin = 1.25;  // m short of contact range
inline constexpr double kExpertLateralDecay = 0.5;

namespace expert_detail {

// Tent-shaped per-step speed drops taking v down by `drop`, respecting the
// dv/ddv caps. Returned values are the successive speeds (ending at
// v0 - drop); empty when drop is negligible.
inline std::vector<double> ramp_speeds(double v0, double drop) {
  std::vector<double> out;
  if (drop <= 1e-12) return out;
  for (int n = 1; n <= 64; ++n) {
    double w_sum = 0.0, w_max = 0.0;
    for (int j = 1; j <= n; ++j) {
      const double w = std::min(j, n + 1 - j);
      w_sum += w;
      w_max = std::max(w_max, w);
    }
    if (drop / w_sum > kExpertMaxDdv) continue;
    if (drop * w_max / w_sum > kExpertMaxDv) continue;
    double v = v0;
    for (int j = 1; j <= n; ++j) {
      const double w = std::min(j, n + 1 - j);
      v -= drop * w / w_sum;
      out.push_back(std::max(v, 0.0));
    }
    out.back() = v0 - drop;  // exact landing
    return out;
  }
  return out;  // unreachable for sane speeds
}

inline std::vector<double> stop_speeds(double v0) {
  auto s = ramp_speeds(v0, v0);
  if (!s.empty()) s.back() = 0.0;
  return s;
}

inline double stop_distance(double v0) {
  double d = 0.0;
  for (double v : stop_speeds(v0)) d += v * kWaypointDt;
  return d;
}

// Expands a plan prefix into exactly kNumWaypoints per-segment speeds,
// holding the final value.
inline std::vector<double> pad_plan(std::vector<double> seg) {
  if (seg.empty()) seg.push_back(0.0);
  while (static_cast<int>(seg.size()) < kNumWaypoints) seg.push_back(seg.back());
  seg.resize(kNumWaypoints);
  return seg;
}

}  // namespace expert_detail

// Distance the expert needs to come to a full stop from speed v0.
inline double expert_stop_distance(double v0) { return expert_detail::stop_distance(v0); }

inline Trajectory trajectory_from_speed_plan(const std::vector<double>& seg_speeds,
                                             const Polyline& poly, const EgoState& ego) {
  const auto prj = poly.project(ego.position);
  const double s0 = prj.s;
  // signed lateral offset of the ego relative to the centerline
  const Vec2 on_path = poly.point_at(s0);
  const Vec2 n = poly.left_normal_at(s0);
  double lateral = (ego.position - on_path).dot(n);

  Trajectory traj;
  double s = s0;
  double e = lateral;
  for (int i = 0; i < kNumWaypoints; ++i) {
    s = std::min(s + seg_speeds[i] * kWaypointDt, poly.length());
    e *= kExpertLateralDecay;
    const Vec2 p = poly.point_at(s) + poly.left_normal_at(s) * e;
    const double h = poly.heading_at(s);
    const Vec2 pe = to_ego_frame(p, ego.position, ego.heading);
    traj.waypoints[i] = {pe.x, pe.y, wrap_angle(h - ego.heading)};
  }
  return traj;
}

inline Trajectory expert_plan(const Scene& scene, const EgoState& ego) {
  const Polyline poly(scene.centerline);
  const double s0 = poly.project(ego.position).s;
  const double v0 = ego.speed;

  // nearest static blocker along the centerline
  double stop_at = kInf;
  for (const auto& o : scene.obstacles) {
    const auto prj = poly.project(o.center);
    if (prj.s <= s0) continue;
    if (prj.dist < o.radius + kEgoRadius + 0.3) {
      stop_at = std::min(stop_at, prj.s - o.radius - kEgoRadius - kExpertStopMargin);
    }
  }

  using expert_detail::pad_plan;
  using expert_detail::ramp_speeds;
  using expert_detail::stop_speeds;

  std::vector<std::vector<double>> plans;
  plans.push_back(pad_plan(std::vector<double>(kNumWaypoints, v0)));  // hold
  if (std::isfinite(stop_at)) {
    // brake as late as the stop target allows
    const double budget = stop_at - s0;
    const double d_ramp = expert_detail::stop_distance(v0);
    std::vector<double> plan;
    if (budget >= d_ramp) {
      const int cruise = static_cast<int>((budget - d_ramp) / (v0 * kWaypointDt));
      for (int i = 0; i < cruise; ++i) plan.push_back(v0);
    }
    for (double v : stop_speeds(v0)) plan.push_back(v);
    plans.push_back(pad_plan(plan));
  }
  for (double frac : {0.6, 0.35}) {
    auto plan = ramp_speeds(v0, v0 * (1.0 - frac));
    plans.push_back(pad_plan(plan));
  }
  plans.push_back(pad_plan(stop_speeds(v0)));  // full stop now

  int best = -1;
  double best_progress = -kInf;
  Trajectory best_traj;
  std::vector<Trajectory> trajs(plans.size());
  for (size_t i = 0; i < plans.size(); ++i) {
    trajs[i] = trajectory_from_speed_plan(plans[i], poly, ego);
    const MotionProfile mp = rollout(trajs[i], ego);
    const int nc = score_nc(mp, scene);
    const int dac = score_dac(mp, scene, poly);
    const int ttc = score_ttc(mp, scene);
    const int comfort = score_comfort(mp);
    if (nc && dac && ttc && comfort) {
      const double prog = path_progress(mp, poly);
      if (prog > best_progress + 1e-12) {
        best_progress = prog;
        best = static_cast<int>(i);
        best_traj = trajs[i];
      }
    }
  }
  if (best < 0) return trajs.back();  // no feasible progress: full stop
  return best_traj;
}

}  // namespace microdrive
