#pragma once

// Closed-loop driving score: five sub-scores and the composite
//   composite = nc * dac * (5 ep + 5 ttc + 2 comfort) / 12.
// All threshold comparisons are inclusive; collision requires strict
// intersection, so exact tangency never counts.

#include <algorithm>
#include <cmath>

#include "microdrive/geometry.hpp"
#include "microdrive/rollout.hpp"
#include "microdrive/scene.hpp"

namespace microdrive {

inline constexpr double kAccelLimit = 4.0;    // m/s^2
inline constexpr double kJerkLimit = 8.0;     // m/s^3
inline constexpr double kYawRateLimit = 1.0;  // rad/s
inline constexpr double kTtcThreshold = 1.0;  // s
inline constexpr double kEpsProgress = 0.1;   // m

struct ScoreBreakdown {
  int nc = 0;
  int dac = 0;
  double ep = 0.0;
  int ttc = 0;
  int comfort = 0;
  double composite = 0.0;
};

inline double composite_score(int nc, int dac, double ep, int ttc, int comfort) {
  return nc * dac * (5.0 * ep + 5.0 * ttc + 2.0 * comfort) / 12.0;
}

// No at-fault collision. Each 0.1 s sub-interval is linear relative motion,
// so the minimum distance over the interval is exact; point sampling alone
// could hop over shallow grazing contacts.
inline int score_nc(const MotionProfile& mp, const Scene& scene) {
  for (size_t k = 0; k + 1 < mp.size(); ++k) {
    const Vec2 ev = (mp.position[k + 1] - mp.position[k]) / kFineDt;
    for (const auto& o : scene.obstacles) {
      const Approach ap = closest_approach(mp.position[k] - o.center, ev, kFineDt);
      if (ap.dist < kEgoRadius + o.radius) return 0;
    }
    for (const auto& a : scene.agents) {
      const Vec2 rel0 = mp.position[k] - (a.position + a.velocity * mp.t[k]);
      const Approach ap = closest_approach(rel0, ev - a.velocity, kFineDt);
      if (ap.dist < kEgoRadius + a.radius) return 0;
    }
  }
  return 1;
}

// Drivable-area compliance: every sub-step position within
// half_width - r_ego of the centerline (inclusive).
inline int score_dac(const MotionProfile& mp, const Scene& scene, const Polyline& poly) {
  const double lim = scene.half_width - kEgoRadius;
  for (const auto& p : mp.position) {
    if (poly.distance(p) > lim) return 0;
  }
  return 1;
}

// Signed arclength advance of the closest-point projection.
inline double path_progress(const MotionProfile& mp, const Polyline& poly) {
  const double s0 = poly.project(mp.position.front()).s;
  const double s1 = poly.project(mp.position.back()).s;
  return s1 - s0;
}

inline double score_ep(const MotionProfile& mp, const MotionProfile& expert_mp,
                       const Polyline& poly) {
  const double prog = path_progress(mp, poly);
  const double expert_prog = path_progress(expert_mp, poly);
  return std::clamp(prog / std::max(expert_prog, kEpsProgress), 0.0, 1.0);
}

// Time to collision: at each sub-step project the ego at its instantaneous
// velocity and every agent at its own; pass iff min contact time >= 1 s.
inline int score_ttc(const MotionProfile& mp, const Scene& scene) {
  for (size_t k = 0; k < mp.size(); ++k) {
    const Vec2 ev = mp.velocity[k];
    for (const auto& o : scene.obstacles) {
      const double t = first_contact_time(mp.position[k] - o.center, ev, kEgoRadius + o.radius);
      if (t < kTtcThreshold) return 0;
    }
    for (const auto& a : scene.agents) {
      const Vec2 rel0 = mp.position[k] - (a.position + a.velocity * mp.t[k]);
      const double t = first_contact_time(rel0, ev - a.velocity, kEgoRadius + a.radius);
      if (t < kTtcThreshold) return 0;
    }
  }
  return 1;
}

inline int score_comfort(const MotionProfile& mp) {
  for (size_t k = 0; k < mp.size(); ++k) {
    if (std::abs(mp.accel[k]) > kAccelLimit) return 0;
    if (std::abs(mp.jerk[k]) > kJerkLimit) return 0;
    if (std::abs(mp.yaw_rate[k]) > kYawRateLimit) return 0;
  }
  return 1;
}

inline ScoreBreakdown score_profile(const MotionProfile& mp, const MotionProfile& expert_mp,
                                    const Scene& scene, const Polyline& poly) {
  ScoreBreakdown b;
  b.nc = score_nc(mp, scene);
  b.dac = score_dac(mp, scene, poly);
  b.ep = score_ep(mp, expert_mp, poly);
  b.ttc = score_ttc(mp, scene);
  b.comfort = score_comfort(mp);
  b.composite = composite_score(b.nc, b.dac, b.ep, b.ttc, b.comfort);
  return b;
}

inline ScoreBreakdown evaluate_trajectory(const Trajectory& traj, const Scene& scene,
                                          const EgoState& ego, const Trajectory& expert) {
  const Polyline poly(scene.centerline);
  const MotionProfile mp = rollout(traj, ego);
  const MotionProfile emp = rollout(expert, ego);
  return score_profile(mp, emp, scene, poly);
}

}  // namespace microdrive
