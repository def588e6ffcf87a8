#pragma once

// Gated composite reward: driving score plus a world-model-uncertainty
// exploration bonus that only safe trajectories receive. The entropy always
// comes from the frozen stage-1 world model, never the live policy.

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "microdrive/model.hpp"
#include "microdrive/pack.hpp"
#include "microdrive/render.hpp"
#include "microdrive/scenesim.hpp"
#include "microdrive/scorer.hpp"

namespace microdrive {

struct RewardConfig {
  double delta = 0.9;   // safety threshold
  double lambda = 0.5;  // exploration weight
  double h_ref = 1.0;   // normalization ceiling (max-entropy bound)

  void validate() const {
    if (delta < 0.0 || delta >= 1.0) throw std::invalid_argument("delta outside [0,1)");
    if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
    if (h_ref <= 0.0) throw std::invalid_argument("h_ref must be positive");
  }
};

struct RewardBreakdown {
  ScoreBreakdown score;
  double entropy = 0.0;  // nats
  double bonus = 0.0;    // in [0,1]
  double reward = 0.0;
  bool gated = false;    // composite > delta
};

inline double exploration_bonus(double entropy, const RewardConfig& cfg) {
  return std::clamp(entropy / cfg.h_ref, 0.0, 1.0);
}

// Strict inequality at the threshold: a composite of exactly delta gets
// no bonus.
inline double gated_reward(double composite, double bonus, const RewardConfig& cfg) {
  return composite > cfg.delta ? composite + cfg.lambda * bonus : composite;
}

// Frozen evaluator for the exploration signal.
struct WorldModel {
  ModelConfig config;
  ModelParams params;
};

// Everything needed to pack a candidate's entropy query.
struct CandidateContext {
  int command = 0;
  std::array<double, kEgoFeatDim> ego_features{};
  std::vector<TokenFrame> history;
  SeqLayout layout;
};

inline double candidate_entropy(const WorldModel& world, const CandidateContext& ctx,
                                const Trajectory& candidate) {
  // rng is unused when the whole future is masked; keep a fixed stream anyway
  Rng rng(0);
  const PackedSequence ps =
      pack_sequence(ctx.command, ctx.ego_features, ctx.history, candidate, nullptr, 1.0,
                    world.config.vocab, ctx.layout, rng);
  return token_entropy(world.params, world.config, ps);
}

inline RewardBreakdown score_candidate(const Trajectory& candidate, const Scene& scene,
                                       const EgoState& ego, const Trajectory& expert,
                                       const WorldModel& world, const CandidateContext& ctx,
                                       const RewardConfig& cfg) {
  cfg.validate();
  RewardBreakdown out;
  out.score = evaluate_trajectory(candidate, scene, ego, expert);
  out.entropy = candidate_entropy(world, ctx, candidate);
  out.bonus = exploration_bonus(out.entropy, cfg);
  out.gated = out.score.composite > cfg.delta;
  out.reward = gated_reward(out.score.composite, out.bonus, cfg);
  return out;
}

inline nlohmann::json to_json(const RewardBreakdown& rb) {
  return {{"nc", rb.score.nc},
          {"dac", rb.score.dac},
          {"ep", rb.score.ep},
          {"ttc", rb.score.ttc},
          {"comfort", rb.score.comfort},
          {"composite", rb.score.composite},
          {"entropy", rb.entropy},
          {"bonus", rb.bonus},
          {"reward", rb.reward},
          {"gated", rb.gated}};
}

}  // namespace microdrive
