#pragma once

// Stage-1 training loops. Pre-training conditions on the ground-truth expert
// action and optimizes the generation loss only; supervised fine-tuning
// drops the action conditioning and adds the imitation loss, computed on a
// fully masked packing so the trajectory head trains in its inference
// regime.

#include <optional>
#include <string>
#include <vector>

#include "microdrive/config.hpp"
#include "microdrive/dataset.hpp"
#include "microdrive/metrics.hpp"
#include "microdrive/model.hpp"
#include "microdrive/optimizer.hpp"

namespace microdrive {

inline PackedSequence pack_record(const DatasetRecord& rec, const Scene& scene,
                                  const RunConfig& cfg, bool with_action, bool with_future,
                                  double mask_ratio, Rng& rng) {
  const auto feats = ego_features_for(scene, rec.ego, rec.command);
  std::optional<Trajectory> action;
  if (with_action) action = rec.expert;
  return pack_sequence(rec.command, feats, rec.history, action,
                       with_future ? &rec.future : nullptr, mask_ratio,
                       cfg.model_config().vocab, cfg.layout(), rng);
}

// The observation 0.5 s after executing `action` from the record's ego state.
inline TokenFrame render_consequence(const DatasetRecord& rec, const Scene& scene,
                                     const Trajectory& action, const RenderParams& rp,
                                     const VocabLayout& vocab) {
  const Waypoint& w1 = action.waypoints[0];
  EgoState fut;
  fut.position = to_world_frame({w1.x, w1.y}, rec.ego.position, rec.ego.heading);
  fut.heading = wrap_angle(rec.ego.heading + w1.theta);
  fut.speed = Vec2{w1.x, w1.y}.norm() / kWaypointDt;
  return render_frame(scene, fut, rp, vocab, kWaypointDt);
}

// Pre-training sample, optionally with a perturbed action and its exactly
// rendered consequence.
inline TrainSample pretrain_sample(const DatasetRecord& rec, const Scene& scene,
                                   const RunConfig& cfg, Rng& rng) {
  const double ratio = rng.uniform(cfg.mask_ratio_min, cfg.mask_ratio_max);
  if (cfg.pretrain_aug_prob > 0.0 && rng.bernoulli(cfg.pretrain_aug_prob)) {
    Trajectory action = rec.expert;
    for (auto& w : action.waypoints) {
      w.x += cfg.pretrain_aug_std * rng.normal();
      w.y += cfg.pretrain_aug_std * rng.normal();
      w.theta += cfg.pretrain_aug_theta_std * rng.normal();
    }
    const TokenFrame future =
        render_consequence(rec, scene, action, cfg.render_params(), cfg.model_config().vocab);
    const auto feats = ego_features_for(scene, rec.ego, rec.command);
    return {pack_sequence(rec.command, feats, rec.history, action, &future, ratio,
                          cfg.model_config().vocab, cfg.layout(), rng),
            rec.expert};
  }
  return {pack_record(rec, scene, cfg, true, true, ratio, rng), rec.expert};
}

// Inference-style packing: no action, the whole future masked.
inline PackedSequence pack_inference(const DatasetRecord& rec, const Scene& scene,
                                     const RunConfig& cfg) {
  Rng rng(0);
  return pack_record(rec, scene, cfg, false, false, 1.0, rng);
}

inline double mean_open_loop_l2(const ModelParams& params, const RunConfig& cfg,
                                const SplitData& data, int n_threads) {
  const ModelConfig mc = cfg.model_config();
  const int n = static_cast<int>(data.records.size());
  std::vector<double> l2(n, 0.0);
  parallel_for(n, n_threads, [&](int i) {
    const DatasetRecord& rec = data.records[i];
    const PackedSequence ps = pack_inference(rec, data.scenes[rec.scene_ref], cfg);
    const Trajectory mu = predict_trajectory(params, mc, ps);
    double acc = 0.0;
    for (int w = 0; w < kNumWaypoints; ++w) {
      const double dx = mu.waypoints[w].x - rec.expert.waypoints[w].x;
      const double dy = mu.waypoints[w].y - rec.expert.waypoints[w].y;
      acc += std::sqrt(dx * dx + dy * dy) / kNumWaypoints;
    }
    l2[i] = acc;
  });
  double mean = 0.0;
  for (double v : l2) mean += v / n;
  return mean;
}

struct StageResult {
  ModelParams params;
  double first_loss = 0.0;
  double final_loss = 0.0;
};

// Masked-token pre-training with the expert action as input.
inline StageResult run_pretrain(const RunConfig& cfg, const SplitData& train,
                                JsonlWriter& metrics) {
  const ModelConfig mc = cfg.model_config();
  StageResult out{ModelParams::init(mc, mix_seed(static_cast<uint64_t>(cfg.seed),
                                                 tag_of("model_init")))};
  if (!cfg.sft_rgb && !cfg.sft_depth) {
    metrics.write({{"stage", "pretrain"}, {"event", "skipped"},
                   {"reason", "no generation modality enabled"}});
    return out;
  }
  AdamW opt;
  opt.lr = cfg.stage1_lr;
  opt.weight_decay = cfg.weight_decay;
  LossWeights lw;
  lw.rgb = cfg.sft_rgb ? 1.0 : 0.0;
  lw.depth = cfg.sft_depth ? 1.0 : 0.0;

  const int n = static_cast<int>(train.records.size());
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng order_rng(mix_seed(static_cast<uint64_t>(cfg.seed), tag_of("pretrain_order"), epoch));
    order_rng.shuffle(order);

    double ep_loss = 0.0, ep_rgb = 0.0, ep_depth = 0.0;
    int steps = 0;
    for (int b = 0; b < n; b += cfg.batch_size) {
      std::vector<TrainSample> batch;
      for (int k = b; k < std::min(b + cfg.batch_size, n); ++k) {
        const DatasetRecord& rec = train.records[order[k]];
        Rng rng(mix_seed(static_cast<uint64_t>(cfg.seed), tag_of("pretrain_mask"),
                         static_cast<uint64_t>(epoch) * 1000003ull + order[k]));
        batch.push_back(pretrain_sample(rec, train.scenes[rec.scene_ref], cfg, rng));
      }
      const GradResult gr = compute_gradients(out.params, mc, batch, LossKind::kMtp, lw);
      opt.step(out.params, gr.grads);
      ep_loss += gr.loss;
      ep_rgb += gr.l_rgb;
      ep_depth += gr.l_depth;
      ++steps;
      if (epoch == 0 && steps == 1) out.first_loss = gr.loss;
    }
    ep_loss /= steps;
    ep_rgb /= steps;
    ep_depth /= steps;
    out.final_loss = ep_loss;
    metrics.write({{"stage", "pretrain"}, {"epoch", epoch + 1}, {"loss", ep_loss},
                   {"l_rgb", ep_rgb}, {"l_depth", ep_depth}});
  }
  return out;
}

// Joint action + generation fine-tuning without action conditioning.
inline StageResult run_sft(const RunConfig& cfg, const SplitData& train, const SplitData& val,
                           ModelParams init, JsonlWriter& metrics) {
  const ModelConfig mc = cfg.model_config();
  StageResult out{std::move(init)};
  AdamW opt;
  opt.lr = cfg.stage1_lr;
  opt.weight_decay = cfg.weight_decay;
  LossWeights lw;
  lw.rgb = cfg.sft_rgb ? 1.0 : 0.0;
  lw.depth = cfg.sft_depth ? 1.0 : 0.0;
  const bool any_mtp = (cfg.sft_rgb || cfg.sft_depth) && cfg.mtp_weight != 0.0;

  metrics.write({{"stage", "sft"}, {"epoch", 0}, {"event", "init"},
                 {"val_l2", mean_open_loop_l2(out.params, cfg, val, cfg.threads)}});

  const int n = static_cast<int>(train.records.size());
  for (int epoch = 0; epoch < cfg.sft_epochs; ++epoch) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng order_rng(mix_seed(static_cast<uint64_t>(cfg.seed), tag_of("sft_order"), epoch));
    order_rng.shuffle(order);

    double ep_loss = 0.0, ep_rgb = 0.0, ep_depth = 0.0, ep_imit = 0.0;
    int steps = 0;
    for (int b = 0; b < n; b += cfg.batch_size) {
      std::vector<TrainSample> masked, infer;
      for (int k = b; k < std::min(b + cfg.batch_size, n); ++k) {
        const DatasetRecord& rec = train.records[order[k]];
        const Scene& scene = train.scenes[rec.scene_ref];
        Rng rng(mix_seed(static_cast<uint64_t>(cfg.seed), tag_of("sft_mask"),
                         static_cast<uint64_t>(epoch) * 1000003ull + order[k]));
        const double ratio = rng.uniform(cfg.mask_ratio_min, cfg.mask_ratio_max);
        if (any_mtp) {
          masked.push_back({pack_record(rec, scene, cfg, false, true, ratio, rng), rec.expert});
        }
        infer.push_back({pack_inference(rec, scene, cfg), rec.expert});
      }
      std::map<std::string, Tensor> grads;
      double loss = 0.0;
      const GradResult gi = compute_gradients(out.params, mc, infer, LossKind::kImitation, lw);
      loss += gi.loss;
      ep_imit += gi.l_imit;
      grads = gi.grads;
      if (any_mtp) {
        const GradResult gm = compute_gradients(out.params, mc, masked, LossKind::kMtp, lw);
        loss += cfg.mtp_weight * gm.loss;
        ep_rgb += gm.l_rgb;
        ep_depth += gm.l_depth;
        for (const auto& [name, g] : gm.grads) {
          auto it = grads.find(name);
          if (it == grads.end()) {
            Tensor scaled = g;
            for (auto& v : scaled.data) v *= cfg.mtp_weight;
            grads.emplace(name, std::move(scaled));
          } else {
            for (size_t i = 0; i < g.size(); ++i) it->second.data[i] += cfg.mtp_weight * g.data[i];
          }
        }
      }
      opt.step(out.params, grads);
      ep_loss += loss;
      ++steps;
      if (epoch == 0 && steps == 1) out.first_loss = loss;
    }
    ep_loss /= steps;
    out.final_loss = ep_loss;
    metrics.write({{"stage", "sft"}, {"epoch", epoch + 1}, {"loss", ep_loss},
                   {"l_imit", ep_imit / steps}, {"l_rgb", ep_rgb / steps},
                   {"l_depth", ep_depth / steps},
                   {"val_l2", mean_open_loop_l2(out.params, cfg, val, cfg.threads)}});
  }
  return out;
}

}  // namespace microdrive
