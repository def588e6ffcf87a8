#pragma once

// Domain value types: Scene, EgoState, Trajectory, plus JSON line
// serialization. Scene files hold one JSON object per line; dataset files
// reference scenes by line index.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "microdrive/geometry.hpp"

namespace microdrive {

inline constexpr double kEgoRadius = 0.5;   // m
inline constexpr int kNumWaypoints = 8;     // N_tau: 4 s horizon at 0.5 s
inline constexpr double kWaypointDt = 0.5;  // s
inline constexpr double kFineDt = 0.1;      // s, sub-step interpolation

struct Obstacle {
  Vec2 center;
  double radius = 0.0;
  bool operator==(const Obstacle&) const = default;
};

struct Agent {
  Vec2 position;  // at t = 0
  Vec2 velocity;  // constant
  double radius = 0.0;
  bool operator==(const Agent&) const = default;
};

struct Scene {
  std::vector<Vec2> centerline;
  double half_width = 0.0;
  std::vector<Obstacle> obstacles;
  std::vector<Agent> agents;
  double goal_arclength = 0.0;
  int64_t rng_seed = 0;

  Polyline path() const { return Polyline(centerline); }
  bool operator==(const Scene&) const = default;
};

struct EgoState {
  Vec2 position;
  double heading = 0.0;  // rad, wrapped to (-pi, pi]
  double speed = 0.0;    // m/s, >= 0
};

struct Waypoint {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  bool operator==(const Waypoint&) const = default;
};

// N_tau waypoints in the ego frame at plan time, 0.5 s apart.
struct Trajectory {
  std::array<Waypoint, kNumWaypoints> waypoints{};
  bool operator==(const Trajectory&) const = default;

  bool finite() const {
    for (const auto& w : waypoints) {
      if (!std::isfinite(w.x) || !std::isfinite(w.y) || !std::isfinite(w.theta)) return false;
    }
    return true;
  }
};

// Throws if a scene violates its declared invariants.
inline void validate_scene(const Scene& scene) {
  if (scene.centerline.size() < 2) throw std::invalid_argument("scene: centerline too short");
  if (scene.half_width <= kEgoRadius)
    throw std::invalid_argument("scene: half_width must exceed ego radius");
  const Polyline poly(scene.centerline);
  if (poly.length() < scene.goal_arclength)
    throw std::invalid_argument("scene: goal beyond centerline end");
  const double min_gap = 2.0 * kEgoRadius;  // one ego width
  auto check_gap = [&](const Vec2& c, double r, const char* what) {
    const auto prj = poly.project(c);
    const double lat = prj.dist;
    if (lat >= scene.half_width + r) return;  // fully off the corridor
    // free widths left and right of the disc, measured across the corridor
    const double hw = scene.half_width;
    const double gap_a = hw + (lat - r);   // disc pushed to one side
    const double gap_b = hw - (lat + r);   // remaining width on the other
    if (std::max(gap_a, gap_b) + 1e-9 < min_gap)
      throw std::invalid_argument(std::string("scene: ") + what + " blocks the corridor");
  };
  for (const auto& o : scene.obstacles) check_gap(o.center, o.radius, "obstacle");
  for (const auto& a : scene.agents) check_gap(a.position, a.radius, "agent");
}

// --------------------------------------------------------------------------
// JSON serialization (schema version 1).

inline nlohmann::json to_json(const Vec2& v) { return nlohmann::json::array({v.x, v.y}); }

inline Vec2 vec2_from_json(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

inline nlohmann::json to_json(const Scene& s) {
  nlohmann::json j;
  j["v"] = 1;
  auto& cl = j["centerline"] = nlohmann::json::array();
  for (const auto& p : s.centerline) cl.push_back(to_json(p));
  j["half_width"] = s.half_width;
  auto& obs = j["obstacles"] = nlohmann::json::array();
  for (const auto& o : s.obstacles) obs.push_back({{"c", to_json(o.center)}, {"r", o.radius}});
  auto& ags = j["agents"] = nlohmann::json::array();
  for (const auto& a : s.agents)
    ags.push_back({{"p", to_json(a.position)}, {"v", to_json(a.velocity)}, {"r", a.radius}});
  j["goal_s"] = s.goal_arclength;
  j["seed"] = s.rng_seed;
  return j;
}

inline Scene scene_from_json(const nlohmann::json& j) {
  if (j.at("v").get<int>() != 1) throw std::runtime_error("scene: unsupported schema version");
  Scene s;
  for (const auto& p : j.at("centerline")) s.centerline.push_back(vec2_from_json(p));
  s.half_width = j.at("half_width").get<double>();
  for (const auto& o : j.at("obstacles"))
    s.obstacles.push_back({vec2_from_json(o.at("c")), o.at("r").get<double>()});
  for (const auto& a : j.at("agents"))
    s.agents.push_back(
        {vec2_from_json(a.at("p")), vec2_from_json(a.at("v")), a.at("r").get<double>()});
  s.goal_arclength = j.at("goal_s").get<double>();
  s.rng_seed = j.at("seed").get<int64_t>();
  return s;
}

inline nlohmann::json to_json(const EgoState& e) {
  return {{"p", to_json(e.position)}, {"heading", e.heading}, {"speed", e.speed}};
}

inline EgoState ego_from_json(const nlohmann::json& j) {
  return {vec2_from_json(j.at("p")), j.at("heading").get<double>(), j.at("speed").get<double>()};
}

inline nlohmann::json to_json(const Trajectory& t) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& w : t.waypoints) j.push_back({w.x, w.y, w.theta});
  return j;
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  if (j.size() != kNumWaypoints) throw std::runtime_error("trajectory: wrong waypoint count");
  Trajectory t;
  for (int i = 0; i < kNumWaypoints; ++i) {
    t.waypoints[i] = {j[i].at(0).get<double>(), j[i].at(1).get<double>(),
                      j[i].at(2).get<double>()};
  }
  return t;
}

}  // namespace microdrive
