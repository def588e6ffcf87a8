#include <catch2/catch_amalgamated.hpp>

#include "microdrive/grpo.hpp"
#include "microdrive/reward.hpp"

using namespace microdrive;

namespace {

RenderParams micro_render() {
  RenderParams rp;
  rp.grid_h = 4;
  rp.grid_w = 4;
  rp.cell_size = 2.0;
  rp.n_rays = 4;
  rp.d_max = 12.0;
  rp.n_depth_bins = 8;
  return rp;
}

ModelConfig micro_config(const RenderParams& rp) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.traj_hidden = 8;
  cfg.vocab.n_depth_bins = rp.n_depth_bins;
  cfg.max_seq_len = SeqLayout::make(rp).total;
  return cfg;
}

struct Fixture {
  RenderParams rp = micro_render();
  ModelConfig cfg = micro_config(rp);
  Scene scene;
  EgoState ego;
  Trajectory expert;
  WorldModel world;
  CandidateContext ctx;
  RewardConfig rc;

  Fixture() {
    scene = generate_scene(11, ScenarioProfile::kObstacle);
    ego = canonical_ego(scene);
    expert = expert_plan(scene, ego);
    world.config = cfg;
    world.params = ModelParams::init(cfg, 99);
    const EgoState hist = history_ego(scene, ego);
    ctx.command = command_for(ScenarioProfile::kObstacle, scene);
    ctx.ego_features =
        make_ego_features(ego.speed, wrap_angle(ego.heading - hist.heading) / kWaypointDt,
                          ctx.command);
    ctx.history = {render_frame(scene, hist, rp, cfg.vocab, -kWaypointDt),
                   render_frame(scene, ego, rp, cfg.vocab, 0.0)};
    ctx.layout = SeqLayout::make(rp);
    rc.h_ref = entropy_ceiling(ctx.layout, cfg.vocab);
  }
};

}  // namespace

TEST_CASE("exploration bonus is a linear clamp") {
  RewardConfig rc;
  rc.h_ref = 2.0;
  CHECK(exploration_bonus(0.0, rc) == 0.0);
  CHECK(exploration_bonus(2.0, rc) == 1.0);
  CHECK(exploration_bonus(1.0, rc) == 0.5);
  CHECK(exploration_bonus(5.0, rc) == 1.0);
}

TEST_CASE("gated reward: bonus only above the strict threshold") {
  RewardConfig rc;  // delta 0.9, lambda 0.5
  CHECK(gated_reward(0.95, 0.4, rc) == Catch::Approx(1.15));
  CHECK(gated_reward(0.9, 1.0, rc) == 0.9);  // boundary: strict inequality
  CHECK(gated_reward(0.5, 1.0, rc) == 0.5);
}

TEST_CASE("reward invariants over fuzzed inputs") {
  Rng rng(13);
  for (int i = 0; i < 10000; ++i) {
    RewardConfig rc;
    rc.delta = rng.uniform(0.0, 0.99);
    rc.lambda = rng.uniform(0.0, 2.0);
    rc.h_ref = rng.uniform(0.1, 3.0);
    const double composite = rng.uniform(0.0, 1.0);
    const double h = rng.uniform(0.0, 4.0);
    const double b = exploration_bonus(h, rc);
    const double r = gated_reward(composite, b, rc);
    CHECK(b >= 0.0);
    CHECK(b <= 1.0);
    CHECK(r >= composite);
    CHECK(r <= composite + rc.lambda + 1e-12);
    if (composite <= rc.delta) CHECK(r == composite);
  }
}

TEST_CASE("reward is monotone in entropy above the gate until the clamp") {
  RewardConfig rc;
  rc.h_ref = 2.0;
  const double composite = 0.95;
  double prev = -1.0;
  for (double h = 0.0; h < 2.0; h += 0.1) {
    const double r = gated_reward(composite, exploration_bonus(h, rc), rc);
    CHECK(r > prev);
    prev = r;
  }
  CHECK(gated_reward(composite, exploration_bonus(2.5, rc), rc) == Catch::Approx(prev + 0.025));
}

TEST_CASE("score_candidate: expert gates, collisions zero out, determinism") {
  Fixture fx;
  const RewardBreakdown rb =
      score_candidate(fx.expert, fx.scene, fx.ego, fx.expert, fx.world, fx.ctx, fx.rc);
  CHECK(rb.gated);  // expert composite >= 0.9 by the scene contract
  CHECK(rb.reward == Catch::Approx(rb.score.composite + fx.rc.lambda * rb.bonus));

  // straight through the blocking obstacle
  Trajectory through;
  for (int i = 0; i < kNumWaypoints; ++i) through.waypoints[i] = {2.5 * (i + 1), 0.0, 0.0};
  const RewardBreakdown bad =
      score_candidate(through, fx.scene, fx.ego, fx.expert, fx.world, fx.ctx, fx.rc);
  CHECK(bad.score.nc == 0);
  CHECK(bad.score.composite == 0.0);
  CHECK(bad.reward == 0.0);
  CHECK_FALSE(bad.gated);

  const RewardBreakdown again =
      score_candidate(fx.expert, fx.scene, fx.ego, fx.expert, fx.world, fx.ctx, fx.rc);
  CHECK(again.reward == rb.reward);
  CHECK(again.entropy == rb.entropy);
}

TEST_CASE("score_candidate ignores any live policy (frozen evaluator)") {
  Fixture fx;
  const RewardBreakdown before =
      score_candidate(fx.expert, fx.scene, fx.ego, fx.expert, fx.world, fx.ctx, fx.rc);
  // mutate a pretend policy: must not affect the frozen world model's verdict
  ModelParams policy = ModelParams::init(fx.cfg, 1234);
  for (auto& [name, t] : policy.arrays) {
    for (auto& v : t.data) v += 1.0;
  }
  const RewardBreakdown after =
      score_candidate(fx.expert, fx.scene, fx.ego, fx.expert, fx.world, fx.ctx, fx.rc);
  CHECK(before.entropy == after.entropy);
  CHECK(before.reward == after.reward);
}

// ---------------------------------------------------------------------------
// Advantages.

TEST_CASE("advantages: two-point example, degenerate floor, shift invariance") {
  GrpoConfig gc;
  const auto a = compute_advantages({1.0, 0.0}, gc);
  CHECK(a[0] == Catch::Approx(1.0));
  CHECK(a[1] == Catch::Approx(-1.0));

  const auto z = compute_advantages({0.7, 0.7, 0.7, 0.7}, gc);
  for (double v : z) CHECK(v == 0.0);

  CHECK_THROWS_AS(compute_advantages({1.0}, gc), std::invalid_argument);

  Rng rng(17);
  std::vector<double> r(8);
  for (auto& v : r) v = rng.uniform(0, 1);
  const auto base = compute_advantages(r, gc);
  std::vector<double> shifted = r;
  for (auto& v : shifted) v += 3.7;
  const auto sh = compute_advantages(shifted, gc);
  for (size_t i = 0; i < r.size(); ++i) CHECK(sh[i] == Catch::Approx(base[i]).margin(1e-9));
}

TEST_CASE("advantages are invariant to positive affine reward maps") {
  GrpoConfig gc;
  Rng rng(18);
  for (int trial = 0; trial < 2500; ++trial) {
    const int g = 2 + rng.below_int(7);
    std::vector<double> r(g);
    for (auto& v : r) v = rng.uniform(-2, 2);
    const auto base = compute_advantages(r, gc);
    const double a = rng.uniform(0.1, 5.0);
    const double b = rng.uniform(-3.0, 3.0);
    std::vector<double> mapped = r;
    for (auto& v : mapped) v = a * v + b;
    const auto got = compute_advantages(mapped, gc);
    for (int i = 0; i < g; ++i) CHECK(got[i] == Catch::Approx(base[i]).margin(1e-7));
    // mean 0 and unit population std whenever the floor is not hit
    double mean = 0.0, var = 0.0;
    for (double v : base) mean += v / g;
    for (double v : base) var += v * v / g;
    bool all_zero = true;
    for (double v : base) all_zero = all_zero && v == 0.0;
    if (!all_zero) {
      CHECK(std::abs(mean) <= 1e-9);
      CHECK(std::abs(std::sqrt(var) - 1.0) <= 1e-6);
    }
  }
}

// ---------------------------------------------------------------------------
// Surrogate.

TEST_CASE("surrogate: zero at the on-policy point, clipped branch, zero case") {
  GrpoConfig gc;
  const std::vector<double> lp{-3.0, -5.0};
  CHECK(surrogate_loss(lp, lp, {1.0, -1.0}, lp, gc) == Catch::Approx(0.0).margin(1e-15));

  // ratio 1.3 with positive advantage: the 1.1 clip is active
  const double adv = 0.8;
  const std::vector<double> old{-2.0};
  const std::vector<double> neu{-2.0 + std::log(1.3)};
  GrpoConfig g1 = gc;
  g1.kl_beta = 0.0;
  // single-candidate group is below the G>=2 contract of advantages, but the
  // surrogate itself is well-defined for any length
  CHECK(surrogate_loss(neu, old, {adv}, old, g1) == Catch::Approx(-1.1 * adv).epsilon(1e-9));

  // beta = 0 and zero advantages: loss 0 with zero gradient
  Tape t(true);
  Tensor nl(1, 2);
  nl.data = {-3.0, -4.0};
  const int v = t.leaf(std::move(nl), true);
  const int L = ad::grpo_surrogate(t, v, {-3.0, -4.0}, {-3.0, -4.0}, {0.0, 0.0}, 0.1, 0.0);
  CHECK(t.scalar(L) == 0.0);
  t.backward(L);
  for (double g : t.grad(v).data) CHECK(g == 0.0);
}

TEST_CASE("surrogate gradient vanishes where the clip is active") {
  // finite-difference check on a 3-candidate toy
  const std::vector<double> old{-2.0, -2.0, -2.0};
  const std::vector<double> ref{-2.1, -1.9, -2.0};
  const std::vector<double> adv{1.0, -1.0, 0.5};
  // ratios: 1.3 (clipped for adv>0), 0.7 (clipped for adv<0), 1.0 (active)
  const std::vector<double> neu{-2.0 + std::log(1.3), -2.0 + std::log(0.7), -2.0};
  GrpoConfig gc;
  gc.kl_beta = 0.0;

  Tape t(true);
  Tensor nl(1, 3);
  nl.data = neu;
  const int v = t.leaf(std::move(nl), true);
  const int L = ad::grpo_surrogate(t, v, old, ref, adv, gc.clip_eps, gc.kl_beta);
  t.backward(L);
  const Tensor grad = t.grad(v);

  const double h = 1e-6;
  for (int i = 0; i < 3; ++i) {
    std::vector<double> p = neu, m = neu;
    p[i] += h;
    m[i] -= h;
    const double fd =
        (surrogate_loss(p, old, adv, ref, gc) - surrogate_loss(m, old, adv, ref, gc)) / (2 * h);
    CHECK(grad.data[i] == Catch::Approx(fd).margin(1e-6));
  }
  // the two clipped candidates contribute no gradient
  CHECK(grad.data[0] == 0.0);
  CHECK(grad.data[1] == 0.0);
  CHECK(grad.data[2] != 0.0);
}

// ---------------------------------------------------------------------------
// rl_step.

namespace {

RlSceneItem make_item(const Fixture& fx) {
  return {fx.scene, fx.ego, fx.expert, fx.ctx, "scene-11"};
}

}  // namespace

TEST_CASE("rl_step with temperature 0 leaves parameters bitwise unchanged") {
  Fixture fx;
  ModelParams policy = ModelParams::init(fx.cfg, 7);
  const ModelParams ref = policy;
  GrpoConfig gc;
  gc.group_size = 4;
  gc.temperature = 0.0;  // identical candidates
  const auto res = rl_step(policy, fx.cfg, ref, fx.world, {make_item(fx)}, gc, fx.rc,
                           RewardMode::kGated, 1e-3, 5, 0);
  CHECK(policy.same_values(ref));
  REQUIRE(res.metrics.size() == 1);
  CHECK(res.metrics[0].kl_est == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("rl_step updates parameters when candidates differ") {
  Fixture fx;
  ModelParams policy = ModelParams::init(fx.cfg, 7);
  const ModelParams ref = policy;
  GrpoConfig gc;
  gc.group_size = 4;
  const auto res = rl_step(policy, fx.cfg, ref, fx.world, {make_item(fx)}, gc, fx.rc,
                           RewardMode::kGated, 1e-3, 5, 0);
  CHECK_FALSE(policy.same_values(ref));
  CHECK(res.groups[0].size() == 4);
}

TEST_CASE("a forced-collision candidate gets the group-minimum advantage") {
  Fixture fx;
  GrpoConfig gc;
  // four candidates: expert, two mild perturbations, one through the obstacle
  Rng rng(23);
  std::vector<Trajectory> cands(4, fx.expert);
  for (int c = 1; c <= 2; ++c) {
    for (auto& w : cands[c].waypoints) {
      w.x += 0.05 * rng.normal();
      w.y += 0.05 * rng.normal();
    }
  }
  for (int i = 0; i < kNumWaypoints; ++i) cands[3].waypoints[i] = {2.5 * (i + 1), 0.0, 0.0};
  std::vector<double> rewards;
  for (const auto& c : cands) {
    rewards.push_back(score_candidate(c, fx.scene, fx.ego, fx.expert, fx.world, fx.ctx, fx.rc).reward);
  }
  const auto adv = compute_advantages(rewards, gc);
  const auto worst = std::min_element(adv.begin(), adv.end());
  CHECK(worst - adv.begin() == 3);
  CHECK(*worst < 0.0);
}

TEST_CASE("reference and world model parameters survive rl_steps bitwise") {
  Fixture fx;
  ModelParams policy = ModelParams::init(fx.cfg, 7);
  const ModelParams ref = policy;
  const ModelParams ref_copy = ref;
  const ModelParams world_copy = fx.world.params;
  GrpoConfig gc;
  gc.group_size = 3;
  for (int step = 0; step < 3; ++step) {
    rl_step(policy, fx.cfg, ref, fx.world, {make_item(fx)}, gc, fx.rc, RewardMode::kGated, 1e-3,
            5, step);
  }
  CHECK(ref.same_values(ref_copy));
  CHECK(fx.world.params.same_values(world_copy));
}

TEST_CASE("rl_step is invariant to the scoring thread count") {
  Fixture fx;
  GrpoConfig gc;
  gc.group_size = 4;
  ModelParams p1 = ModelParams::init(fx.cfg, 7);
  ModelParams p2 = p1;
  const ModelParams ref = p1;
  rl_step(p1, fx.cfg, ref, fx.world, {make_item(fx)}, gc, fx.rc, RewardMode::kGated, 1e-3, 5, 0, 1);
  rl_step(p2, fx.cfg, ref, fx.world, {make_item(fx)}, gc, fx.rc, RewardMode::kGated, 1e-3, 5, 0, 2);
  CHECK(p1.same_values(p2));
}

TEST_CASE("reward modes select the scalar that drives advantages") {
  RewardBreakdown rb;
  rb.score.composite = 0.95;
  rb.bonus = 0.4;
  rb.gated = true;
  rb.reward = 0.95 + 0.5 * 0.4;
  CHECK(reward_for_mode(rb, RewardMode::kGated) == Catch::Approx(1.15));
  CHECK(reward_for_mode(rb, RewardMode::kPdmsOnly) == Catch::Approx(0.95));
  CHECK(reward_for_mode(rb, RewardMode::kBonusOnly) == Catch::Approx(0.4));
  CHECK(reward_mode_from_name("gated") == RewardMode::kGated);
  CHECK_THROWS_AS(reward_mode_from_name("nope"), std::invalid_argument);
}
