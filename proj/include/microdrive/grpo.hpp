#pragma once

// Group-relative policy optimization: sample a group of candidates, score
// them, normalize rewards into advantages, and apply a clipped
// likelihood-ratio update with a sampled KL penalty against a frozen
// reference.

#include <cmath>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "microdrive/model.hpp"
#include "microdrive/optimizer.hpp"
#include "microdrive/reward.hpp"
#include "microdrive/threading.hpp"

namespace microdrive {

struct GrpoConfig {
  int group_size = 8;
  double clip_eps = 0.1;
  double kl_beta = 0.01;
  double std_floor = 1e-8;
  int updates_per_group = 1;
  double temperature = 1.0;

  void validate() const {
    if (group_size < 2) throw std::invalid_argument("group_size must be >= 2");
    if (clip_eps <= 0.0 || clip_eps >= 1.0) throw std::invalid_argument("clip_eps outside (0,1)");
    if (kl_beta < 0.0) throw std::invalid_argument("kl_beta must be >= 0");
  }
};

// Which scalar drives the advantages (the reward-component ablation arms).
enum class RewardMode { kGated, kPdmsOnly, kBonusOnly };

inline const char* reward_mode_name(RewardMode m) {
  switch (m) {
    case RewardMode::kGated: return "gated";
    case RewardMode::kPdmsOnly: return "pdms_only";
    case RewardMode::kBonusOnly: return "bonus_only";
  }
  return "?";
}

inline RewardMode reward_mode_from_name(const std::string& s) {
  if (s == "gated") return RewardMode::kGated;
  if (s == "pdms_only") return RewardMode::kPdmsOnly;
  if (s == "bonus_only") return RewardMode::kBonusOnly;
  throw std::invalid_argument("unknown reward mode: " + s);
}

inline double reward_for_mode(const RewardBreakdown& rb, RewardMode m) {
  switch (m) {
    case RewardMode::kGated: return rb.reward;
    case RewardMode::kPdmsOnly: return rb.score.composite;
    case RewardMode::kBonusOnly: return rb.bonus;
  }
  return rb.reward;
}

// Group-normalized advantages with population std; a degenerate group
// (std under the floor) zeroes them all.
inline std::vector<double> compute_advantages(const std::vector<double>& rewards,
                                              const GrpoConfig& cfg) {
  const int g = static_cast<int>(rewards.size());
  if (g < 2) throw std::invalid_argument("compute_advantages: need at least 2 rewards");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= g;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std = std::sqrt(var / g);
  std::vector<double> adv(g, 0.0);
  if (std < cfg.std_floor) return adv;
  for (int i = 0; i < g; ++i) adv[i] = (rewards[i] - mean) / std;
  return adv;
}

// Value of the clipped surrogate plus sampled KL (matches the tape op).
inline double surrogate_loss(const std::vector<double>& new_lp, const std::vector<double>& old_lp,
                             const std::vector<double>& adv, const std::vector<double>& ref_lp,
                             const GrpoConfig& cfg) {
  const int g = static_cast<int>(new_lp.size());
  double loss = 0.0;
  for (int i = 0; i < g; ++i) {
    if (!std::isfinite(new_lp[i]) || !std::isfinite(old_lp[i]) || !std::isfinite(ref_lp[i]) ||
        !std::isfinite(adv[i]))
      throw std::invalid_argument("surrogate_loss: non-finite input");
    const double r = std::exp(new_lp[i] - old_lp[i]);
    const double clipped = std::clamp(r, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    loss += -std::min(r * adv[i], clipped * adv[i]) / g;
    loss += cfg.kl_beta * (new_lp[i] - ref_lp[i]) / g;
  }
  return loss;
}

// ---------------------------------------------------------------------------

struct RlSceneItem {
  Scene scene;
  EgoState ego;
  Trajectory expert;
  CandidateContext ctx;
  std::string ref;  // scene identifier for metrics
};

struct GroupMetrics {
  int step = 0;
  std::string scene_ref;
  double mean_reward = 0.0;
  double mean_composite = 0.0;
  double mean_bonus = 0.0;
  double frac_gated = 0.0;
  double kl_est = 0.0;
};

inline nlohmann::json to_json(const GroupMetrics& m) {
  return {{"step", m.step},           {"scene_ref", m.scene_ref},
          {"mean_R", m.mean_reward},  {"mean_composite", m.mean_composite},
          {"mean_b", m.mean_bonus},   {"frac_gated", m.frac_gated},
          {"kl_est", m.kl_est}};
}

struct RlStepResult {
  std::vector<GroupMetrics> metrics;
  std::vector<std::vector<RewardBreakdown>> groups;  // per scene, per candidate
};

// One gradient step per scene: sample G candidates from the current policy,
// score them against the frozen world model, normalize within the group and
// descend the clipped surrogate. Groups whose advantages are all zeroed
// leave the parameters bitwise unchanged.
inline RlStepResult rl_step(ModelParams& policy, const ModelConfig& cfg,
                            const ModelParams& ref_params, const WorldModel& world,
                            const std::vector<RlSceneItem>& batch, const GrpoConfig& gc,
                            const RewardConfig& rc, RewardMode mode, double lr, uint64_t seed,
                            int step_base, int n_threads = 1) {
  gc.validate();
  rc.validate();
  RlStepResult out;
  Rng dummy(0);
  const Sgd opt{lr};

  for (size_t si = 0; si < batch.size(); ++si) {
    const RlSceneItem& item = batch[si];
    const int step = step_base + static_cast<int>(si);
    const PackedSequence ps =
        pack_sequence(item.ctx.command, item.ctx.ego_features, item.ctx.history, std::nullopt,
                      nullptr, 1.0, cfg.vocab, item.ctx.layout, dummy);

    ForwardPass fp = forward(policy, cfg, ps, true);
    const Tensor mu = fp.tape.val(fp.mu);
    const Tensor log_std = fp.tape.val(fp.log_std);

    // reference log-probs need the frozen policy's own mean
    ForwardPass ref_fp = forward(ref_params, cfg, ps, false);
    const Tensor ref_mu = ref_fp.tape.val(ref_fp.mu);
    const Tensor ref_ls = ref_fp.tape.val(ref_fp.log_std);

    const int G = gc.group_size;
    std::vector<std::vector<double>> taus(G);
    std::vector<double> old_lp(G), ref_lp(G);
    std::vector<RewardBreakdown> group(G);
    for (int i = 0; i < G; ++i) {
      Rng crng(mix_seed(seed, static_cast<uint64_t>(step), static_cast<uint64_t>(i)));
      const SampledTrajectory st = sample_trajectory(mu, log_std, crng, gc.temperature);
      taus[i] = trajectory_flat(st.traj);
      old_lp[i] = st.log_prob;
      ref_lp[i] = gaussian_log_prob(taus[i].data(), ref_mu, ref_ls);
    }
    parallel_for(G, n_threads, [&](int i) {
      Trajectory tr;
      for (int w = 0; w < kNumWaypoints; ++w) {
        tr.waypoints[w] = {taus[i][3 * w], taus[i][3 * w + 1], taus[i][3 * w + 2]};
      }
      group[i] = score_candidate(tr, item.scene, item.ego, item.expert, world, item.ctx, rc);
    });

    std::vector<double> rewards(G);
    for (int i = 0; i < G; ++i) rewards[i] = reward_for_mode(group[i], mode);
    const std::vector<double> adv = compute_advantages(rewards, gc);

    GroupMetrics m;
    m.step = step;
    m.scene_ref = item.ref;
    for (int i = 0; i < G; ++i) {
      m.mean_reward += rewards[i] / G;
      m.mean_composite += group[i].score.composite / G;
      m.mean_bonus += group[i].bonus / G;
      m.frac_gated += group[i].gated ? 1.0 / G : 0.0;
      m.kl_est += (old_lp[i] - ref_lp[i]) / G;
    }
    out.metrics.push_back(std::move(m));
    out.groups.push_back(std::move(group));

    bool any_adv = false;
    for (double a : adv) any_adv = any_adv || a != 0.0;
    if (!any_adv) continue;  // degenerate group: no ranking signal, no update

    for (int u = 0; u < gc.updates_per_group; ++u) {
      ForwardPass ufp = (u == 0) ? std::move(fp) : forward(policy, cfg, ps, true);
      Tape& t = ufp.tape;
      std::vector<int> lps;
      lps.reserve(G);
      for (int i = 0; i < G; ++i) lps.push_back(ad::gauss_logprob(t, ufp.mu, ufp.log_std, taus[i]));
      const int new_lp = ad::stack_scalars(t, lps);
      const int loss = ad::grpo_surrogate(t, new_lp, old_lp, ref_lp, adv, gc.clip_eps, gc.kl_beta);
      if (!std::isfinite(t.scalar(loss))) throw std::runtime_error("rl_step: non-finite surrogate");
      t.backward(loss);
      std::map<std::string, Tensor> grads;
      for (const auto& [name, var] : ufp.param_vars) {
        if (t.has_grad(var)) grads.emplace(name, t.grad(var));
      }
      opt.step(policy, grads);
    }
  }
  return out;
}

}  // namespace microdrive
