// Renders one generated scene as ASCII: the BEV grid around the ego, the
// expert plan and its score breakdown.
//
//   scene_preview [seed] [profile]

#include <cstdio>
#include <string>

#include "microdrive/render.hpp"
#include "microdrive/scenesim.hpp"
#include "microdrive/scorer.hpp"

using namespace microdrive;

int main(int argc, char** argv) {
  const int64_t seed = argc > 1 ? std::stoll(argv[1]) : 42;
  const ScenarioProfile profile =
      argc > 2 ? profile_from_name(argv[2]) : ScenarioProfile::kObstacle;

  const Scene scene = generate_scene(seed, profile);
  const EgoState ego = canonical_ego(scene);
  const Trajectory expert = expert_plan(scene, ego);
  const ScoreBreakdown sb = evaluate_trajectory(expert, scene, ego, expert);

  RenderParams rp;
  const auto grid = render_bev(scene, ego, rp, 0.0);

  std::printf("seed=%lld profile=%s  ego speed=%.2f m/s\n", static_cast<long long>(seed),
              profile_name(profile), ego.speed);
  std::printf("grid %dx%d, 1 cell = %.1f m, ego at column 0 facing right\n\n", rp.grid_h,
              rp.grid_w, rp.cell_size);
  const char glyph[4] = {'.', '#', 'O', '*'};  // free, off-road, obstacle, goal
  for (int j = rp.grid_w - 1; j >= 0; --j) {
    for (int i = 0; i < rp.grid_h; ++i) {
      std::putchar(glyph[static_cast<int>(grid[i * rp.grid_w + j])]);
    }
    std::putchar('\n');
  }
  std::printf("\nexpert waypoints (ego frame):\n");
  for (int i = 0; i < kNumWaypoints; ++i) {
    const auto& w = expert.waypoints[i];
    std::printf("  t=%.1fs  (%6.2f, %6.2f)  theta=%6.3f\n", 0.5 * (i + 1), w.x, w.y, w.theta);
  }
  std::printf("\nscores: NC=%d DAC=%d EP=%.3f TTC=%d Comfort=%d  composite=%.3f\n", sb.nc, sb.dac,
              sb.ep, sb.ttc, sb.comfort, sb.composite);
  return 0;
}
