#pragma once

// Observation rendering: a BEV semantic grid (the appearance modality) and a
// quantized ray-range row (the geometric modality), both as discrete tokens
// with exact ground truth.

#include <cmath>
#include <vector>

#include <json.hpp>

#include "microdrive/geometry.hpp"
#include "microdrive/rollout.hpp"
#include "microdrive/scene.hpp"
#include "microdrive/vocab.hpp"

namespace microdrive {

struct RenderParams {
  int grid_h = 16;        // cells along +x (forward)
  int grid_w = 16;        // cells along y (lateral)
  double cell_size = 1.0; // m
  int n_rays = 32;        // spanning [-pi/2, pi/2] inclusive
  double d_max = 24.0;    // m
  int n_depth_bins = 32;

  int tokens_per_frame() const { return grid_h * grid_w; }  // M

  // cell center in the ego frame; forward cells start at x = 0
  Vec2 cell_center(int i, int j) const {
    return {i * cell_size, (j - grid_w / 2) * cell_size};
  }
  double ray_angle(int k) const {
    if (n_rays == 1) return 0.0;
    return -kPi / 2.0 + k * (kPi / (n_rays - 1));
  }
  bool operator==(const RenderParams&) const = default;
};

// One observation frame as tokens (ids already in their vocab ranges).
struct TokenFrame {
  std::vector<int> rgb_tokens;    // grid_h * grid_w
  std::vector<int> depth_tokens;  // n_rays
  bool operator==(const TokenFrame&) const = default;
};

inline int quantize_depth(double d, const RenderParams& p) {
  const int bin = static_cast<int>(std::floor(d * p.n_depth_bins / p.d_max));
  return std::min(std::max(bin, 0), p.n_depth_bins - 1);
}

inline double dequantize_depth(int bin, const RenderParams& p) {
  return (bin + 0.5) * p.d_max / p.n_depth_bins;
}

// Classifies each cell by its center point in the ego frame at time t.
// Priority: obstacle/agent disc > off-road > goal > free.
inline std::vector<BevClass> render_bev(const Scene& scene, const EgoState& ego,
                                        const RenderParams& p, double t) {
  const Polyline poly(scene.centerline);
  const Vec2 goal = poly.point_at(scene.goal_arclength);
  const std::vector<Vec2> agent_pos = propagate_agents(scene, t);

  std::vector<BevClass> grid(static_cast<size_t>(p.grid_h) * p.grid_w, BevClass::kFree);
  for (int i = 0; i < p.grid_h; ++i) {
    for (int j = 0; j < p.grid_w; ++j) {
      const Vec2 q = to_world_frame(p.cell_center(i, j), ego.position, ego.heading);
      BevClass cls = BevClass::kFree;
      bool hit = false;
      for (const auto& o : scene.obstacles) {
        if ((q - o.center).norm() <= o.radius) {
          hit = true;
          break;
        }
      }
      if (!hit) {
        for (size_t a = 0; a < scene.agents.size(); ++a) {
          if ((q - agent_pos[a]).norm() <= scene.agents[a].radius) {
            hit = true;
            break;
          }
        }
      }
      if (hit) {
        cls = BevClass::kObstacle;
      } else if (poly.distance(q) > scene.half_width) {
        cls = BevClass::kOffRoad;
      } else if ((q - goal).norm() <= p.cell_size) {
        cls = BevClass::kGoal;
      }
      grid[static_cast<size_t>(i) * p.grid_w + j] = cls;
    }
  }
  return grid;
}

// Ray ranges to the nearest disc or corridor boundary, clamped to d_max.
inline std::vector<double> render_depth_ranges(const Scene& scene, const EgoState& ego,
                                               const RenderParams& p, double t) {
  const Polyline poly(scene.centerline);
  const std::vector<Vec2> agent_pos = propagate_agents(scene, t);
  std::vector<double> out(p.n_rays, p.d_max);
  for (int k = 0; k < p.n_rays; ++k) {
    const Vec2 dir = rotate({1.0, 0.0}, ego.heading + p.ray_angle(k));
    double range = corridor_exit_distance(poly, scene.half_width, ego.position, dir, p.d_max);
    for (const auto& o : scene.obstacles) {
      if (auto hit = ray_circle_first_hit(ego.position, dir, o.center, o.radius)) {
        range = std::min(range, *hit);
      }
    }
    for (size_t a = 0; a < scene.agents.size(); ++a) {
      if (auto hit =
              ray_circle_first_hit(ego.position, dir, agent_pos[a], scene.agents[a].radius)) {
        range = std::min(range, *hit);
      }
    }
    out[k] = std::min(range, p.d_max);
  }
  return out;
}

inline TokenFrame render_frame(const Scene& scene, const EgoState& ego, const RenderParams& p,
                               const VocabLayout& vocab, double t) {
  TokenFrame f;
  const auto grid = render_bev(scene, ego, p, t);
  f.rgb_tokens.reserve(grid.size());
  for (BevClass c : grid) f.rgb_tokens.push_back(vocab.encode_rgb(static_cast<int>(c)));
  for (double d : render_depth_ranges(scene, ego, p, t)) {
    f.depth_tokens.push_back(vocab.encode_depth(quantize_depth(d, p)));
  }
  return f;
}

inline nlohmann::json to_json(const TokenFrame& f, const RenderParams& p) {
  nlohmann::json j;
  j["rgb"] = {{"shape", {p.grid_h, p.grid_w}}, {"data", f.rgb_tokens}};
  j["depth"] = {{"shape", {p.n_rays}}, {"data", f.depth_tokens}};
  return j;
}

inline TokenFrame frame_from_json(const nlohmann::json& j) {
  TokenFrame f;
  f.rgb_tokens = j.at("rgb").at("data").get<std::vector<int>>();
  f.depth_tokens = j.at("depth").at("data").get<std::vector<int>>();
  return f;
}

}  // namespace microdrive
