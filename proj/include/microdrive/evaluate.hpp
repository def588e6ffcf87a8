#pragma once

// Evaluation: open-loop L2 at fixed horizons, mean driving score at
// temperature 0, oracle best-of-N (nested prefixes of one candidate draw,
// diagnostic only), and the bonus-vs-L2 scatter.

#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "microdrive/config.hpp"
#include "microdrive/dataset.hpp"
#include "microdrive/reward.hpp"
#include "microdrive/scorer.hpp"
#include "microdrive/threading.hpp"
#include "microdrive/train.hpp"

namespace microdrive {

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  if (n < 2 || y.size() != n) return std::numeric_limits<double>::quiet_NaN();
  auto ranks = [](const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += rx[i] / n;
    my += ry[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx <= 0 || syy <= 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

struct EvalReport {
  double l2_1s = 0, l2_2s = 0, l2_4s = 0, l2_avg = 0;
  double mean_composite = 0;
  double mean_nc = 0, mean_dac = 0, mean_ep = 0, mean_ttc = 0, mean_comfort = 0;
  std::vector<std::pair<int, double>> best_of;  // (N, mean composite)
  double spearman_bonus_l2 = std::numeric_limits<double>::quiet_NaN();
  int n_scatter = 0;
  std::vector<std::pair<double, double>> scatter;  // (L2 to expert, bonus)
  std::vector<double> composites;                  // per scene, temperature 0

  double best_of_n(int n) const {
    for (const auto& [k, v] : best_of) {
      if (k == n) return v;
    }
    throw std::out_of_range("best_of_n: N not evaluated");
  }
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["l2_1s"] = r.l2_1s;
  j["l2_2s"] = r.l2_2s;
  j["l2_4s"] = r.l2_4s;
  j["l2_avg"] = r.l2_avg;
  j["mean_composite"] = r.mean_composite;
  j["mean_nc"] = r.mean_nc;
  j["mean_dac"] = r.mean_dac;
  j["mean_ep"] = r.mean_ep;
  j["mean_ttc"] = r.mean_ttc;
  j["mean_comfort"] = r.mean_comfort;
  auto& bo = j["best_of"] = nlohmann::json::object();
  for (const auto& [n, v] : r.best_of) bo[std::to_string(n)] = v;
  if (std::isfinite(r.spearman_bonus_l2)) j["spearman_bonus_l2"] = r.spearman_bonus_l2;
  j["n_scatter"] = r.n_scatter;
  return j;
}

inline double waypoint_l2(const Trajectory& a, const Trajectory& b, int i) {
  const double dx = a.waypoints[i].x - b.waypoints[i].x;
  const double dy = a.waypoints[i].y - b.waypoints[i].y;
  return std::sqrt(dx * dx + dy * dy);
}

inline double mean_l2(const Trajectory& a, const Trajectory& b) {
  double acc = 0.0;
  for (int i = 0; i < kNumWaypoints; ++i) acc += waypoint_l2(a, b, i) / kNumWaypoints;
  return acc;
}

// `params` may be null: the expert trajectories evaluate themselves
// (self-comparison baseline); candidate sampling is skipped in that mode.
inline EvalReport evaluate_params(const RunConfig& cfg, const ModelConfig& mc,
                                  const ModelParams* params, const SplitData& data) {
  const int n = static_cast<int>(data.records.size());
  if (n == 0) throw IoError("evaluate: empty split");
  const RewardConfig rc = cfg.reward_config();
  const int n_max = cfg.eval_best_of.back();

  struct PerScene {
    double l2_1s, l2_2s, l2_4s, l2_avg;
    ScoreBreakdown sb;
    std::vector<double> best_prefix;              // per N in eval_best_of
    std::vector<std::pair<double, double>> scat;  // (l2, bonus)
  };
  std::vector<PerScene> rows(n);

  parallel_for(n, cfg.threads, [&](int i) {
    const DatasetRecord& rec = data.records[i];
    const Scene& scene = data.scenes[rec.scene_ref];
    const PackedSequence ps = pack_inference(rec, scene, cfg);
    PerScene& row = rows[i];

    Trajectory pred = rec.expert;
    Tensor mu, log_std;
    if (params) {
      ForwardPass fp = forward(*params, mc, ps, false);
      mu = fp.tape.val(fp.mu);
      log_std = fp.tape.val(fp.log_std);
      pred = trajectory_from_mu(mu);
    }
    row.l2_1s = waypoint_l2(pred, rec.expert, 1);
    row.l2_2s = waypoint_l2(pred, rec.expert, 3);
    row.l2_4s = waypoint_l2(pred, rec.expert, 7);
    row.l2_avg = mean_l2(pred, rec.expert);
    row.sb = evaluate_trajectory(pred, scene, rec.ego, rec.expert);

    if (!params) return;
    CandidateContext ctx;
    ctx.command = rec.command;
    ctx.ego_features = ego_features_for(scene, rec.ego, rec.command);
    ctx.history = rec.history;
    ctx.layout = cfg.layout();
    const WorldModel world{mc, *params};

    // nested best-of prefixes from one draw of n_max candidates
    Rng bo_rng(mix_seed(static_cast<uint64_t>(cfg.seed), tag_of("eval_best_of"), i));
    double best = -1.0;
    std::vector<double> prefix;
    for (int k = 0; k < n_max; ++k) {
      const SampledTrajectory st = sample_trajectory(mu, log_std, bo_rng, cfg.eval_temperature);
      const ScoreBreakdown sb = evaluate_trajectory(st.traj, scene, rec.ego, rec.expert);
      best = std::max(best, sb.composite);
      prefix.push_back(best);
    }
    for (int N : cfg.eval_best_of) row.best_prefix.push_back(prefix[N - 1]);

    Rng sc_rng(mix_seed(static_cast<uint64_t>(cfg.seed), tag_of("eval_scatter"), i));
    for (int k = 0; k < cfg.eval_scatter_per_scene; ++k) {
      const SampledTrajectory st = sample_trajectory(mu, log_std, sc_rng, cfg.eval_temperature);
      const double h = candidate_entropy(world, ctx, st.traj);
      row.scat.emplace_back(mean_l2(st.traj, rec.expert), exploration_bonus(h, rc));
    }
  });

  EvalReport rep;
  rep.best_of.reserve(cfg.eval_best_of.size());
  std::vector<double> bo_sum(cfg.eval_best_of.size(), 0.0);
  for (const PerScene& row : rows) {
    rep.l2_1s += row.l2_1s / n;
    rep.l2_2s += row.l2_2s / n;
    rep.l2_4s += row.l2_4s / n;
    rep.l2_avg += row.l2_avg / n;
    rep.mean_composite += row.sb.composite / n;
    rep.mean_nc += static_cast<double>(row.sb.nc) / n;
    rep.mean_dac += static_cast<double>(row.sb.dac) / n;
    rep.mean_ep += row.sb.ep / n;
    rep.mean_ttc += static_cast<double>(row.sb.ttc) / n;
    rep.mean_comfort += static_cast<double>(row.sb.comfort) / n;
    rep.composites.push_back(row.sb.composite);
    for (size_t k = 0; k < row.best_prefix.size(); ++k) bo_sum[k] += row.best_prefix[k] / n;
    rep.scatter.insert(rep.scatter.end(), row.scat.begin(), row.scat.end());
  }
  if (params) {
    for (size_t k = 0; k < cfg.eval_best_of.size(); ++k) {
      rep.best_of.emplace_back(cfg.eval_best_of[k], bo_sum[k]);
    }
  }
  rep.n_scatter = static_cast<int>(rep.scatter.size());
  if (rep.n_scatter >= 2) {
    std::vector<double> xs, ys;
    for (const auto& [l2, b] : rep.scatter) {
      xs.push_back(l2);
      ys.push_back(b);
    }
    rep.spearman_bonus_l2 = spearman(xs, ys);
  }
  return rep;
}

// Mean composite of the temperature-0 policy on a split (the RL probe).
inline double mean_val_composite(const ModelParams& params, const RunConfig& cfg,
                                 const SplitData& data) {
  const ModelConfig mc = cfg.model_config();
  const int n = static_cast<int>(data.records.size());
  std::vector<double> comp(n, 0.0);
  parallel_for(n, cfg.threads, [&](int i) {
    const DatasetRecord& rec = data.records[i];
    const Scene& scene = data.scenes[rec.scene_ref];
    const Trajectory mu = predict_trajectory(params, mc, pack_inference(rec, scene, cfg));
    comp[i] = evaluate_trajectory(mu, scene, rec.ego, rec.expert).composite;
  });
  double mean = 0.0;
  for (double v : comp) mean += v / n;
  return mean;
}

}  // namespace microdrive
