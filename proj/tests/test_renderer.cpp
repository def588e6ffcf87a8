#include <catch2/catch_amalgamated.hpp>

#include "microdrive/pack.hpp"
#include "microdrive/render.hpp"
#include "microdrive/scenesim.hpp"

using namespace microdrive;

namespace {

Scene straight_scene(double hw = 2.5, double len = 60.0) {
  Scene s;
  for (int i = 0; i <= static_cast<int>(len); ++i) s.centerline.push_back({double(i), 0.0});
  s.half_width = hw;
  s.goal_arclength = 55.0;  // outside the default grid
  s.rng_seed = 1;
  return s;
}

RenderParams default_params() { return RenderParams{}; }

}  // namespace

TEST_CASE("bev: empty straight road splits free vs off-road at the corridor edge") {
  const Scene s = straight_scene(2.5);
  const EgoState ego{{8.0, 0.0}, 0.0, 4.0};
  const RenderParams p = default_params();
  const auto grid = render_bev(s, ego, p, 0.0);
  for (int i = 0; i < p.grid_h; ++i) {
    for (int j = 0; j < p.grid_w; ++j) {
      const Vec2 c = p.cell_center(i, j);
      const BevClass cls = grid[i * p.grid_w + j];
      if (std::abs(c.y) <= s.half_width) {
        CHECK(cls == BevClass::kFree);
      } else {
        CHECK(cls == BevClass::kOffRoad);
      }
    }
  }
}

TEST_CASE("bev: obstacle 5 m ahead lands in the (5,0) cell") {
  Scene s = straight_scene();
  s.obstacles.push_back({{13.0, 0.0}, 1.0});  // ego at x=8 below: 5 m ahead
  const EgoState ego{{8.0, 0.0}, 0.0, 4.0};
  const RenderParams p = default_params();
  const auto grid = render_bev(s, ego, p, 0.0);
  const int i = 5, j = p.grid_w / 2;  // cell center (5, 0)
  CHECK(grid[i * p.grid_w + j] == BevClass::kObstacle);
}

TEST_CASE("bev: goal cell appears within cell_size of the goal point") {
  Scene s = straight_scene();
  s.goal_arclength = 14.0;  // 6 m ahead of the ego below
  const EgoState ego{{8.0, 0.0}, 0.0, 4.0};
  const RenderParams p = default_params();
  const auto grid = render_bev(s, ego, p, 0.0);
  CHECK(grid[6 * p.grid_w + p.grid_w / 2] == BevClass::kGoal);
}

TEST_CASE("bev: rotating the ego rotates the obstacle cell") {
  Scene s = straight_scene(3.0);
  s.obstacles.push_back({{8.0, 5.0}, 0.6});
  const RenderParams p = default_params();
  const EgoState e0{{8.0, 0.0}, 0.0, 4.0};
  const EgoState e90{{8.0, 0.0}, kPi / 2.0, 4.0};
  const auto g0 = render_bev(s, e0, p, 0.0);
  const auto g90 = render_bev(s, e90, p, 0.0);
  // world (8,5) is 5 m left of e0 -> ego frame (0,5); for e90 it is dead
  // ahead -> ego frame (5,0)
  CHECK(g0[0 * p.grid_w + (p.grid_w / 2 + 5)] == BevClass::kObstacle);
  CHECK(g90[5 * p.grid_w + p.grid_w / 2] == BevClass::kObstacle);
}

TEST_CASE("depth: obstacle dead ahead gives an exact 4 m range") {
  Scene s = straight_scene();
  s.obstacles.push_back({{13.0, 0.0}, 1.0});
  const EgoState ego{{8.0, 0.0}, 0.0, 4.0};
  RenderParams p = default_params();
  p.n_rays = 33;  // odd: one ray points exactly forward
  const auto ranges = render_depth_ranges(s, ego, p, 0.0);
  CHECK(ranges[16] == 4.0);
}

TEST_CASE("depth: an unobstructed ray clamps to the last bin") {
  const Scene s = straight_scene(2.5, 120.0);
  const EgoState ego{{8.0, 0.0}, 0.0, 4.0};
  RenderParams p = default_params();
  p.n_rays = 33;
  const auto ranges = render_depth_ranges(s, ego, p, 0.0);
  CHECK(ranges[16] == p.d_max);  // corridor extends past d_max ahead
  CHECK(quantize_depth(ranges[16], p) == p.n_depth_bins - 1);
}

TEST_CASE("depth: full row matches a 1 cm marching ray-caster") {
  Rng rng(4);
  for (int trial = 0; trial < 12; ++trial) {
    const Scene scene = generate_scene(3000 + trial, static_cast<ScenarioProfile>(trial % 4));
    const EgoState ego = canonical_ego(scene);
    const RenderParams p = default_params();
    const double t = rng.uniform(0.0, 1.0);
    const auto ranges = render_depth_ranges(scene, ego, p, t);
    const Polyline poly(scene.centerline);
    const auto agents = propagate_agents(scene, t);
    for (int k = 0; k < p.n_rays; ++k) {
      const Vec2 dir = rotate({1.0, 0.0}, ego.heading + p.ray_angle(k));
      double oracle = p.d_max;
      for (double d = 0.0; d <= p.d_max; d += 0.01) {
        const Vec2 q = ego.position + dir * d;
        bool blocked = poly.distance(q) > scene.half_width;
        for (const auto& o : scene.obstacles) {
          blocked = blocked || (q - o.center).norm() <= o.radius;
        }
        for (size_t a = 0; a < scene.agents.size(); ++a) {
          blocked = blocked || (q - agents[a]).norm() <= scene.agents[a].radius;
        }
        if (blocked) {
          oracle = d;
          break;
        }
      }
      CHECK(std::abs(ranges[k] - oracle) <= 0.02);
    }
  }
}

TEST_CASE("depth quantizer boundaries and round trip") {
  const RenderParams p = default_params();
  CHECK(quantize_depth(0.0, p) == 0);
  CHECK(quantize_depth(p.d_max, p) == p.n_depth_bins - 1);
  CHECK(quantize_depth(p.d_max * 10, p) == p.n_depth_bins - 1);
  Rng rng(8);
  for (int i = 0; i < 10000; ++i) {
    const double d = rng.uniform(0.0, p.d_max);
    const double back = dequantize_depth(quantize_depth(d, p), p);
    CHECK(std::abs(d - back) <= p.d_max / (2.0 * p.n_depth_bins) + 1e-12);
  }
}

TEST_CASE("vocabulary ranges are disjoint and round-trip exactly") {
  VocabLayout v;
  v.n_depth_bins = 32;
  std::vector<int> owners(v.total(), -1);
  for (int c = 0; c < v.n_commands; ++c) {
    const int id = v.encode_command(c);
    CHECK(owners[id] == -1);
    owners[id] = 0;
    CHECK(v.decode_command(id) == c);
  }
  for (int c = 0; c < v.n_rgb; ++c) {
    const int id = v.encode_rgb(c);
    CHECK(owners[id] == -1);
    owners[id] = 1;
    CHECK(v.decode_rgb(id) == c);
  }
  for (int b = 0; b < v.n_depth_bins; ++b) {
    const int id = v.encode_depth(b);
    CHECK(owners[id] == -1);
    owners[id] = 2;
    CHECK(v.decode_depth(id) == b);
  }
  for (int id : {v.mask_id(), v.pad_id(), v.traj_id()}) {
    CHECK(owners[id] == -1);
    owners[id] = 3;
  }
  // every id is owned by exactly one range
  int unowned = 0;
  for (int id = 0; id < v.total(); ++id) unowned += owners[id] == -1;
  CHECK(unowned == 0);
  CHECK_THROWS_AS(v.decode_rgb(v.mask_id()), std::out_of_range);
  CHECK_THROWS_AS(v.encode_depth(v.n_depth_bins), std::out_of_range);
}

TEST_CASE("rendering is covariant under rigid motions") {
  Rng rng(19);
  const RenderParams p = default_params();
  VocabLayout vocab;
  vocab.n_depth_bins = p.n_depth_bins;
  for (int trial = 0; trial < 25; ++trial) {
    const Scene scene = generate_scene(4000 + trial, static_cast<ScenarioProfile>(trial % 4));
    const EgoState ego = canonical_ego(scene);
    const double t = rng.uniform(0.0, 1.0);
    const TokenFrame base = render_frame(scene, ego, p, vocab, t);

    const double phi = rng.uniform(-kPi, kPi);
    const Vec2 shift{rng.uniform(-40, 40), rng.uniform(-40, 40)};
    Scene moved = scene;
    for (auto& pt : moved.centerline) pt = rotate(pt, phi) + shift;
    for (auto& o : moved.obstacles) o.center = rotate(o.center, phi) + shift;
    for (auto& a : moved.agents) {
      a.position = rotate(a.position, phi) + shift;
      a.velocity = rotate(a.velocity, phi);
    }
    const EgoState moved_ego{rotate(ego.position, phi) + shift, wrap_angle(ego.heading + phi),
                             ego.speed};
    const TokenFrame moved_frame = render_frame(moved, moved_ego, p, vocab, t);
    CHECK(base == moved_frame);
  }
}

// --------------------------------------------------------------------------
// pack_sequence

namespace {

PackedSequence pack_with_ratio(double ratio, Rng& rng, const TokenFrame** out_future = nullptr) {
  RenderParams p;
  p.grid_h = 4;
  p.grid_w = 4;
  p.n_rays = 4;
  p.n_depth_bins = 8;
  static VocabLayout vocab;
  vocab.n_depth_bins = p.n_depth_bins;
  static TokenFrame frame;
  frame.rgb_tokens.assign(16, vocab.encode_rgb(0));
  frame.depth_tokens.assign(4, vocab.encode_depth(3));
  if (out_future) *out_future = &frame;
  const SeqLayout layout = SeqLayout::make(p);
  const auto feats = make_ego_features(3.0, 0.1, 1);
  return pack_sequence(1, feats, {frame, frame}, std::nullopt, &frame, ratio, vocab, layout, rng);
}

}  // namespace

TEST_CASE("pack_sequence masks all or nothing at the ratio extremes") {
  Rng rng(1);
  const PackedSequence all = pack_with_ratio(1.0, rng);
  CHECK(static_cast<int>(all.masked_positions.size()) == all.layout.future_len());
  const PackedSequence none = pack_with_ratio(0.0, rng);
  CHECK(none.masked_positions.empty());
  CHECK(none.targets.empty());
}

TEST_CASE("pack_sequence target map covers exactly the masked set") {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const PackedSequence ps = pack_with_ratio(rng.uniform(0.0, 1.0), rng);
    REQUIRE(ps.targets.size() == ps.masked_positions.size());
    VocabLayout vocab;
    vocab.n_depth_bins = 8;
    for (size_t j = 0; j < ps.targets.size(); ++j) {
      CHECK(ps.targets[j].first == ps.masked_positions[j]);
      CHECK(ps.tokens[ps.targets[j].first] == vocab.mask_id());
      const int target = ps.targets[j].second;
      CHECK((vocab.is_rgb(target) || vocab.is_depth(target)));
    }
    // masked positions are future positions and nothing else is masked
    for (int pos = 0; pos < ps.layout.total; ++pos) {
      const bool masked = std::binary_search(ps.masked_positions.begin(),
                                             ps.masked_positions.end(), pos);
      if (masked) {
        CHECK((ps.kinds[pos] == PosKind::kFutRgb || ps.kinds[pos] == PosKind::kFutDepth));
      }
    }
  }
}

TEST_CASE("pack_sequence per-position mask frequency is the ratio") {
  Rng rng(3);
  RenderParams p;
  p.grid_h = 4;
  p.grid_w = 4;
  p.n_rays = 4;
  p.n_depth_bins = 8;
  VocabLayout vocab;
  vocab.n_depth_bins = p.n_depth_bins;
  TokenFrame frame;
  frame.rgb_tokens.assign(16, vocab.encode_rgb(0));
  frame.depth_tokens.assign(4, vocab.encode_depth(3));
  const SeqLayout layout = SeqLayout::make(p);
  const auto feats = make_ego_features(3.0, 0.0, 0);
  std::vector<int> counts(layout.future_len(), 0);
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    const PackedSequence ps = pack_sequence(0, feats, {frame, frame}, std::nullopt, &frame, 0.5,
                                            vocab, layout, rng);
    for (int pos : ps.masked_positions) counts[pos - layout.fut_rgb_begin]++;
  }
  for (int c : counts) {
    CHECK(std::abs(c / static_cast<double>(draws) - 0.5) <= 0.02);
  }
}

TEST_CASE("pack_sequence rejects mask ratios outside [0,1]") {
  Rng rng(4);
  CHECK_THROWS_AS(pack_with_ratio(-0.1, rng), std::invalid_argument);
  CHECK_THROWS_AS(pack_with_ratio(1.1, rng), std::invalid_argument);
}

TEST_CASE("pack_sequence labels partition the sequence with correct blocks") {
  Rng rng(5);
  const PackedSequence ps = pack_with_ratio(0.5, rng);
  const SeqLayout& L = ps.layout;
  CHECK(ps.kinds[L.text_pos] == PosKind::kText);
  CHECK(ps.kinds[L.ego_pos] == PosKind::kEgo);
  for (int i = 0; i < L.n_action; ++i) CHECK(ps.kinds[L.action_begin + i] == PosKind::kAction);
  CHECK(ps.kinds[L.traj_pos] == PosKind::kTrajQuery);
  // distinct image blocks: hist frames 0/1, future rgb, future depth
  CHECK(ps.block[L.hist_begin] == 0);
  CHECK(ps.block[L.hist_begin + L.frame_len] == 1);
  CHECK(ps.block[L.fut_rgb_begin] == 2);
  CHECK(ps.block[L.fut_depth_begin] == 3);
  CHECK(ps.block[L.text_pos] == -1);
  CHECK(ps.block[L.traj_pos] == -1);
}
