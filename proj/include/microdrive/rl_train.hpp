#pragma once

// Stage-2 loop: freeze the reference policy and the world model as copies of
// the stage-1 checkpoint, then run one GRPO update per scene over shuffled
// epochs.

#include <string>
#include <vector>

#include "microdrive/evaluate.hpp"
#include "microdrive/grpo.hpp"

namespace microdrive {

struct RlResult {
  ModelParams params;
  double first_val_composite = 0.0;
  double final_val_composite = 0.0;
};

inline RlResult run_rl(const RunConfig& cfg, const SplitData& train, const SplitData& val,
                       ModelParams stage1, JsonlWriter& metrics, JsonlWriter* rewards) {
  const ModelConfig mc = cfg.model_config();
  RlResult out{std::move(stage1)};
  const ModelParams ref = out.params;        // frozen reference
  const WorldModel world{mc, out.params};    // frozen stage-1 world model
  const GrpoConfig gc = cfg.grpo_config();
  const RewardConfig rc = cfg.reward_config();
  const RewardMode mode = reward_mode_from_name(cfg.reward_mode);
  const double lr = cfg.stage2_effective_lr();

  std::vector<RlSceneItem> items;
  items.reserve(train.records.size());
  for (size_t i = 0; i < train.records.size(); ++i) {
    const DatasetRecord& rec = train.records[i];
    const Scene& scene = train.scenes[rec.scene_ref];
    RlSceneItem it;
    it.scene = scene;
    it.ego = rec.ego;
    it.expert = rec.expert;
    it.ctx.command = rec.command;
    it.ctx.ego_features = ego_features_for(scene, rec.ego, rec.command);
    it.ctx.history = rec.history;
    it.ctx.layout = cfg.layout();
    it.ref = "train:" + std::to_string(i);
    items.push_back(std::move(it));
  }

  out.first_val_composite = mean_val_composite(out.params, cfg, val);
  metrics.write({{"stage", "rl"}, {"epoch", 0}, {"event", "init"},
                 {"val_composite", out.first_val_composite}, {"reward_mode", cfg.reward_mode}});

  const int n = static_cast<int>(items.size());
  for (int epoch = 0; epoch < cfg.rl_epochs; ++epoch) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng order_rng(mix_seed(static_cast<uint64_t>(cfg.seed), tag_of("rl_order"), epoch));
    order_rng.shuffle(order);
    std::vector<RlSceneItem> batch;
    batch.reserve(n);
    for (int i : order) batch.push_back(items[i]);

    const RlStepResult res =
        rl_step(out.params, mc, ref, world, batch, gc, rc, mode, lr,
                mix_seed(static_cast<uint64_t>(cfg.seed), tag_of("rl_sample")), epoch * n,
                cfg.threads);
    double mean_r = 0.0, mean_comp = 0.0, mean_b = 0.0, frac_gated = 0.0, kl = 0.0;
    for (size_t g = 0; g < res.metrics.size(); ++g) {
      const GroupMetrics& m = res.metrics[g];
      metrics.write(to_json(m));
      mean_r += m.mean_reward / res.metrics.size();
      mean_comp += m.mean_composite / res.metrics.size();
      mean_b += m.mean_bonus / res.metrics.size();
      frac_gated += m.frac_gated / res.metrics.size();
      kl += m.kl_est / res.metrics.size();
      if (rewards) {
        for (size_t c = 0; c < res.groups[g].size(); ++c) {
          nlohmann::json j = to_json(res.groups[g][c]);
          j["group"] = m.step;
          j["candidate"] = c;
          rewards->write(j);
        }
      }
    }
    out.final_val_composite = mean_val_composite(out.params, cfg, val);
    metrics.write({{"stage", "rl"}, {"epoch", epoch + 1}, {"mean_R", mean_r},
                   {"mean_composite", mean_comp}, {"mean_b", mean_b},
                   {"frac_gated", frac_gated}, {"kl_est", kl},
                   {"val_composite", out.final_val_composite}});
  }
  return out;
}

}  // namespace microdrive
