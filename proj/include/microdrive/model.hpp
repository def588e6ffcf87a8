#pragma once

// The unified sequence model: mixed causal/full attention over packed
// sequences, token heads for masked future tokens, a continuous trajectory
// head, the Gaussian policy, losses, generation and entropy measurement.
// Forward passes run on the autodiff tape; inference uses the same code with
// gradients disabled.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "microdrive/autodiff.hpp"
#include "microdrive/pack.hpp"
#include "microdrive/rng.hpp"
#include "microdrive/scene.hpp"
#include "microdrive/tensor.hpp"
#include "microdrive/vocab.hpp"

namespace microdrive {

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int traj_hidden = 64;
  int max_seq_len = 0;
  VocabLayout vocab;

  static constexpr int n_tau = kNumWaypoints;
  static constexpr int waypoint_dims = 3;
  int traj_out() const { return n_tau * waypoint_dims; }
  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (d_model % n_heads != 0) throw std::invalid_argument("d_model % n_heads != 0");
    if (max_seq_len <= 0) throw std::invalid_argument("max_seq_len unset");
  }
  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},     {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},     {"d_ff", c.d_ff},
          {"traj_hidden", c.traj_hidden}, {"max_seq_len", c.max_seq_len},
          {"n_depth_bins", c.vocab.n_depth_bins}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.traj_hidden = j.at("traj_hidden").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.vocab.n_depth_bins = j.at("n_depth_bins").get<int>();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters: named arrays in a fixed order (the checkpoint order).

struct ModelParams {
  std::vector<std::pair<std::string, Tensor>> arrays;

  Tensor& at(const std::string& name) {
    for (auto& [n, t] : arrays) {
      if (n == name) return t;
    }
    throw std::out_of_range("no parameter array named " + name);
  }
  const Tensor& at(const std::string& name) const {
    return const_cast<ModelParams*>(this)->at(name);
  }
  bool has(const std::string& name) const {
    for (auto& [n, t] : arrays) {
      if (n == name) return true;
    }
    return false;
  }

  size_t scalar_count() const {
    size_t c = 0;
    for (const auto& [n, t] : arrays) c += t.size();
    return c;
  }

  bool same_values(const ModelParams& o) const {
    if (arrays.size() != o.arrays.size()) return false;
    for (size_t i = 0; i < arrays.size(); ++i) {
      if (arrays[i].first != o.arrays[i].first) return false;
      if (!arrays[i].second.same_shape(o.arrays[i].second)) return false;
      if (arrays[i].second.data != o.arrays[i].second.data) return false;
    }
    return true;
  }

  // uniform(-0.02, 0.02) weights, zero biases, unit norm gains,
  // log-std = ln 0.5
  static ModelParams init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParams p;
    auto w = [&](const std::string& name, int r, int c) {
      p.arrays.emplace_back(name, Tensor::uniform(r, c, -0.02, 0.02, rng));
    };
    auto zeros = [&](const std::string& name, int r, int c) {
      p.arrays.emplace_back(name, Tensor(r, c, 0.0));
    };
    auto ones = [&](const std::string& name, int c) {
      p.arrays.emplace_back(name, Tensor(1, c, 1.0));
    };
    const int d = cfg.d_model;
    const int K = cfg.vocab.total();
    w("tok_emb", K, d);
    w("pos_emb", cfg.max_seq_len, d);
    w("ego_w1", kEgoFeatDim, d);
    zeros("ego_b1", 1, d);
    w("ego_w2", d, d);
    zeros("ego_b2", 1, d);
    w("act_w", ModelConfig::waypoint_dims, d);
    zeros("act_b", 1, d);
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string pre = "l" + std::to_string(l) + ".";
      ones(pre + "ln1_g", d);
      zeros(pre + "ln1_b", 1, d);
      w(pre + "wq", d, d);
      zeros(pre + "bq", 1, d);
      w(pre + "wk", d, d);
      zeros(pre + "bk", 1, d);
      w(pre + "wv", d, d);
      zeros(pre + "bv", 1, d);
      w(pre + "wo", d, d);
      zeros(pre + "bo", 1, d);
      ones(pre + "ln2_g", d);
      zeros(pre + "ln2_b", 1, d);
      w(pre + "mlp_w1", d, cfg.d_ff);
      zeros(pre + "mlp_b1", 1, cfg.d_ff);
      w(pre + "mlp_w2", cfg.d_ff, d);
      zeros(pre + "mlp_b2", 1, d);
    }
    ones("lnf_g", d);
    zeros("lnf_b", 1, d);
    w("head_w", d, K);
    zeros("head_b", 1, K);
    w("traj_w1", d, cfg.traj_hidden);
    zeros("traj_b1", 1, cfg.traj_hidden);
    w("traj_w2", cfg.traj_hidden, cfg.traj_out());
    zeros("traj_b2", 1, cfg.traj_out());
    p.arrays.emplace_back("log_std", Tensor(1, cfg.traj_out(), std::log(0.5)));
    return p;
  }
};

// ---------------------------------------------------------------------------
// Attention mask: causal everywhere, full inside an image block.

inline std::shared_ptr<AttentionMask> build_attention_mask(const std::vector<PosKind>& kinds,
                                                           const std::vector<int>& block) {
  (void)kinds;
  const int n = static_cast<int>(block.size());
  auto m = std::make_shared<AttentionMask>();
  m->n = n;
  m->allowed.assign(static_cast<size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const bool ok = (j <= i) || (block[i] >= 0 && block[i] == block[j]);
      m->allowed[static_cast<size_t>(i) * n + j] = ok ? 1 : 0;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward pass.

// Per-dimension scaling that brings waypoint coordinates to O(1) before the
// action encoder: forward range ~17 m, lateral ~3 m, heading ~0.5 rad.
inline constexpr double kActionScaleX = 0.1;
inline constexpr double kActionScaleY = 1.0;
inline constexpr double kActionScaleTheta = 2.0;

struct ForwardPass {
  Tape tape;
  std::map<std::string, int> param_vars;
  int hidden = -1;   // S x d (final layer norm output)
  int logits = -1;   // S x K
  int mu = -1;       // 1 x (N_tau*3)
  int log_std = -1;  // 1 x (N_tau*3)

  explicit ForwardPass(bool with_grad) : tape(with_grad) {}
};

inline ForwardPass forward(const ModelParams& params, const ModelConfig& cfg,
                           const PackedSequence& ps, bool with_grad) {
  cfg.validate();
  const int S = ps.layout.total;
  if (S > cfg.max_seq_len) throw std::invalid_argument("sequence exceeds max_seq_len");
  ForwardPass fp(with_grad);
  Tape& t = fp.tape;

  for (const auto& [name, tensor] : params.arrays) {
    fp.param_vars[name] = t.leaf(tensor, true);
  }
  auto P = [&](const std::string& n) { return fp.param_vars.at(n); };

  // token embeddings everywhere except positions overridden by encoders
  std::vector<int> tok_rows, tok_ids;
  tok_rows.reserve(S);
  for (int pos = 0; pos < S; ++pos) {
    if (pos == ps.layout.ego_pos) continue;
    if (ps.has_action && ps.kinds[pos] == PosKind::kAction) continue;
    if (ps.tokens[pos] < 0 || ps.tokens[pos] >= cfg.vocab.total())
      throw std::invalid_argument("token id outside vocabulary");
    tok_rows.push_back(pos);
    tok_ids.push_back(ps.tokens[pos]);
  }
  int x = ad::scatter_rows(t, ad::gather_rows(t, P("tok_emb"), tok_ids), tok_rows, S);

  {
    Tensor ef(1, kEgoFeatDim);
    for (int i = 0; i < kEgoFeatDim; ++i) ef.data[i] = ps.ego_features[i];
    int ego = ad::add_rowvec(t, ad::matmul(t, t.constant(std::move(ef)), P("ego_w1")), P("ego_b1"));
    ego = ad::tanh_op(t, ego);
    ego = ad::add_rowvec(t, ad::matmul(t, ego, P("ego_w2")), P("ego_b2"));
    x = ad::add(t, x, ad::scatter_rows(t, ego, {ps.layout.ego_pos}, S));
  }

  if (ps.has_action) {
    Tensor ai(ModelConfig::n_tau, ModelConfig::waypoint_dims);
    for (int i = 0; i < ModelConfig::n_tau; ++i) {
      ai.at(i, 0) = ps.action.waypoints[i].x * kActionScaleX;
      ai.at(i, 1) = ps.action.waypoints[i].y * kActionScaleY;
      ai.at(i, 2) = ps.action.waypoints[i].theta * kActionScaleTheta;
    }
    int act = ad::add_rowvec(t, ad::matmul(t, t.constant(std::move(ai)), P("act_w")), P("act_b"));
    std::vector<int> rows(ModelConfig::n_tau);
    for (int i = 0; i < ModelConfig::n_tau; ++i) rows[i] = ps.layout.action_begin + i;
    x = ad::add(t, x, ad::scatter_rows(t, act, rows, S));
  }

  x = ad::add(t, x, ad::slice_rows(t, P("pos_emb"), 0, S));

  const auto mask = build_attention_mask(ps.kinds, ps.block);
  const int dh = cfg.head_dim();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "l" + std::to_string(l) + ".";
    const int h1 = ad::layernorm(t, x, P(pre + "ln1_g"), P(pre + "ln1_b"));
    const int q = ad::add_rowvec(t, ad::matmul(t, h1, P(pre + "wq")), P(pre + "bq"));
    const int k = ad::add_rowvec(t, ad::matmul(t, h1, P(pre + "wk")), P(pre + "bk"));
    const int v = ad::add_rowvec(t, ad::matmul(t, h1, P(pre + "wv")), P(pre + "bv"));
    std::vector<int> ctx_heads;
    for (int h = 0; h < cfg.n_heads; ++h) {
      const int qh = ad::slice_cols(t, q, h * dh, dh);
      const int kh = ad::slice_cols(t, k, h * dh, dh);
      const int vh = ad::slice_cols(t, v, h * dh, dh);
      const int scores = ad::scale(t, ad::matmul_bt(t, qh, kh), att_scale);
      const int probs = ad::masked_softmax(t, scores, mask);
      ctx_heads.push_back(ad::matmul(t, probs, vh));
    }
    const int ctx = ad::concat_cols(t, ctx_heads);
    const int att = ad::add_rowvec(t, ad::matmul(t, ctx, P(pre + "wo")), P(pre + "bo"));
    x = ad::add(t, x, att);
    const int h2 = ad::layernorm(t, x, P(pre + "ln2_g"), P(pre + "ln2_b"));
    int m = ad::add_rowvec(t, ad::matmul(t, h2, P(pre + "mlp_w1")), P(pre + "mlp_b1"));
    m = ad::gelu(t, m);
    m = ad::add_rowvec(t, ad::matmul(t, m, P(pre + "mlp_w2")), P(pre + "mlp_b2"));
    x = ad::add(t, x, m);
  }

  fp.hidden = ad::layernorm(t, x, P("lnf_g"), P("lnf_b"));
  fp.logits = ad::add_rowvec(t, ad::matmul(t, fp.hidden, P("head_w")), P("head_b"));

  const int ht = ad::slice_rows(t, fp.hidden, ps.layout.traj_pos, 1);
  int tm = ad::add_rowvec(t, ad::matmul(t, ht, P("traj_w1")), P("traj_b1"));
  tm = ad::tanh_op(t, tm);
  fp.mu = ad::add_rowvec(t, ad::matmul(t, tm, P("traj_w2")), P("traj_b2"));
  fp.log_std = P("log_std");
  return fp;
}

inline Trajectory trajectory_from_mu(const Tensor& mu) {
  Trajectory tr;
  for (int i = 0; i < kNumWaypoints; ++i) {
    tr.waypoints[i] = {mu.data[3 * i], mu.data[3 * i + 1], mu.data[3 * i + 2]};
  }
  return tr;
}

// Temperature-0 trajectory prediction (the policy mean).
inline Trajectory predict_trajectory(const ModelParams& params, const ModelConfig& cfg,
                                     const PackedSequence& ps) {
  ForwardPass fp = forward(params, cfg, ps, false);
  return trajectory_from_mu(fp.tape.val(fp.mu));
}

// ---------------------------------------------------------------------------
// Stochastic policy.

struct SampledTrajectory {
  Trajectory traj;
  double log_prob = 0.0;  // density at the sample under the untempered policy
};

inline double gaussian_log_prob(const double* tau, const Tensor& mu, const Tensor& log_std) {
  constexpr double kHalfLog2Pi = 0.9189385332046727;
  double lp = 0.0;
  for (size_t d = 0; d < mu.size(); ++d) {
    const double s = std::exp(log_std.data[d]);
    if (!(s > 0.0)) throw std::invalid_argument("policy std must be positive");
    const double z = (tau[d] - mu.data[d]) / s;
    lp += -0.5 * z * z - log_std.data[d] - kHalfLog2Pi;
  }
  return lp;
}

inline SampledTrajectory sample_trajectory(const Tensor& mu, const Tensor& log_std, Rng& rng,
                                           double temperature) {
  if (temperature < 0.0) throw std::invalid_argument("temperature must be >= 0");
  std::vector<double> tau(mu.size());
  for (size_t d = 0; d < mu.size(); ++d) {
    const double s = std::exp(log_std.data[d]);
    if (!(s > 0.0)) throw std::invalid_argument("policy std must be positive");
    tau[d] = mu.data[d] + temperature * s * rng.normal();
  }
  SampledTrajectory out;
  out.log_prob = gaussian_log_prob(tau.data(), mu, log_std);
  for (int i = 0; i < kNumWaypoints; ++i) {
    out.traj.waypoints[i] = {tau[3 * i], tau[3 * i + 1], tau[3 * i + 2]};
  }
  return out;
}

inline std::vector<double> trajectory_flat(const Trajectory& tr) {
  std::vector<double> v(kNumWaypoints * 3);
  for (int i = 0; i < kNumWaypoints; ++i) {
    v[3 * i] = tr.waypoints[i].x;
    v[3 * i + 1] = tr.waypoints[i].y;
    v[3 * i + 2] = tr.waypoints[i].theta;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Losses.

struct MtpLossVars {
  int l_rgb = -1;
  int l_depth = -1;
  int l_mtp = -1;
};

// Splits the packed target map by modality and builds the two restricted
// cross entropies; empty modality terms are 0.
inline MtpLossVars mtp_loss(Tape& t, int logits, const PackedSequence& ps,
                            const VocabLayout& vocab) {
  std::vector<std::pair<int, int>> rgb, depth;
  for (const auto& [pos, tgt] : ps.targets) {
    if (ps.kinds[pos] == PosKind::kFutRgb) {
      rgb.emplace_back(pos, tgt);
    } else if (ps.kinds[pos] == PosKind::kFutDepth) {
      depth.emplace_back(pos, tgt);
    } else {
      throw std::invalid_argument("mtp_loss: target at a non-future position");
    }
  }
  MtpLossVars out;
  out.l_rgb = ad::restricted_ce(t, logits, std::move(rgb), vocab.rgb_base(),
                                vocab.rgb_base() + vocab.n_rgb);
  out.l_depth = ad::restricted_ce(t, logits, std::move(depth), vocab.depth_base(),
                                  vocab.depth_base() + vocab.n_depth_bins);
  out.l_mtp = ad::weighted_sum(t, {out.l_rgb, out.l_depth}, {1.0, 1.0});
  return out;
}

// Mean absolute error over all waypoint components; theta compared on the
// wrapped angular difference.
inline int imitation_loss(Tape& t, int mu, const Trajectory& expert) {
  std::vector<double> target = trajectory_flat(expert);
  std::vector<bool> wrap(target.size(), false);
  for (size_t d = 2; d < target.size(); d += 3) wrap[d] = true;
  return ad::mae_wrapped(t, mu, std::move(target), std::move(wrap));
}

// ---------------------------------------------------------------------------
// Entropy of the restricted token distributions at masked future positions.

inline double entropy_of_row(const double* row, int lo, int hi) {
  double mx = -kInf;
  for (int j = lo; j < hi; ++j) mx = std::max(mx, row[j]);
  double z = 0.0;
  for (int j = lo; j < hi; ++j) z += std::exp(row[j] - mx);
  double h = 0.0;
  for (int j = lo; j < hi; ++j) {
    const double p = std::exp(row[j] - mx) / z;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

// Probabilities over the full vocabulary at one position; ids outside the
// position's modality range get exactly 0.
inline std::vector<double> restricted_probs(const Tensor& logits, int pos, int lo, int hi) {
  std::vector<double> p(logits.cols, 0.0);
  const double* row = logits.row(pos);
  double mx = -kInf;
  for (int j = lo; j < hi; ++j) mx = std::max(mx, row[j]);
  double z = 0.0;
  for (int j = lo; j < hi; ++j) z += std::exp(row[j] - mx);
  for (int j = lo; j < hi; ++j) p[j] = std::exp(row[j] - mx) / z;
  return p;
}

inline void modality_range(const PackedSequence& ps, const VocabLayout& vocab, int pos, int* lo,
                           int* hi) {
  if (ps.kinds[pos] == PosKind::kFutRgb) {
    *lo = vocab.rgb_base();
    *hi = vocab.rgb_base() + vocab.n_rgb;
  } else if (ps.kinds[pos] == PosKind::kFutDepth) {
    *lo = vocab.depth_base();
    *hi = vocab.depth_base() + vocab.n_depth_bins;
  } else {
    throw std::invalid_argument("position has no generation modality");
  }
}

// Mean per-position entropy over the masked set, in one forward pass.
inline double token_entropy(const ModelParams& params, const ModelConfig& cfg,
                            const PackedSequence& ps, std::vector<double>* per_pos = nullptr) {
  if (ps.masked_positions.empty()) throw std::invalid_argument("token_entropy: empty masked set");
  ForwardPass fp = forward(params, cfg, ps, false);
  const Tensor& logits = fp.tape.val(fp.logits);
  double sum = 0.0;
  if (per_pos) per_pos->clear();
  for (int pos : ps.masked_positions) {
    int lo, hi;
    modality_range(ps, cfg.vocab, pos, &lo, &hi);
    const double h = entropy_of_row(logits.row(pos), lo, hi);
    sum += h;
    if (per_pos) per_pos->push_back(h);
  }
  return sum / static_cast<double>(ps.masked_positions.size());
}

// Weighted maximum-entropy bound over one future frame (the bonus ceiling).
inline double entropy_ceiling(const SeqLayout& layout, const VocabLayout& vocab) {
  const double m = layout.m_tokens, r = layout.n_rays;
  return (m * std::log(double(vocab.n_rgb)) + r * std::log(double(vocab.n_depth_bins))) / (m + r);
}

// ---------------------------------------------------------------------------
// Iterative parallel decoding with a cosine schedule (greedy, deterministic).

inline TokenFrame generate_future(const ModelParams& params, const ModelConfig& cfg,
                                  PackedSequence ps, int steps) {
  if (steps < 1) throw std::invalid_argument("generate_future: steps >= 1");
  const int F = ps.layout.future_len();
  std::vector<int> masked = ps.masked_positions;
  for (int s = 1; s <= steps && !masked.empty(); ++s) {
    const int remaining_target =
        static_cast<int>(std::floor(F * std::cos(kPi * s / (2.0 * steps))));
    int fill = static_cast<int>(masked.size()) - remaining_target;
    fill = std::clamp(fill, 1, static_cast<int>(masked.size()));
    if (s == steps) fill = static_cast<int>(masked.size());

    ForwardPass fp = forward(params, cfg, ps, false);
    const Tensor& logits = fp.tape.val(fp.logits);
    struct Cand {
      double conf;
      int pos;
      int id;
    };
    std::vector<Cand> cands;
    cands.reserve(masked.size());
    for (int pos : masked) {
      int lo, hi;
      modality_range(ps, cfg.vocab, pos, &lo, &hi);
      const double* row = logits.row(pos);
      int best = lo;
      for (int j = lo + 1; j < hi; ++j) {
        if (row[j] > row[best]) best = j;
      }
      const auto p = restricted_probs(logits, pos, lo, hi);
      cands.push_back({p[best], pos, best});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.conf != b.conf) return a.conf > b.conf;
      return a.pos < b.pos;
    });
    std::vector<int> still;
    std::vector<bool> filled_now(ps.layout.total, false);
    for (int i = 0; i < fill; ++i) {
      ps.tokens[cands[i].pos] = cands[i].id;
      filled_now[cands[i].pos] = true;
    }
    for (int pos : masked) {
      if (!filled_now[pos]) still.push_back(pos);
    }
    masked = std::move(still);
  }
  ps.masked_positions.clear();

  TokenFrame out;
  out.rgb_tokens.assign(ps.tokens.begin() + ps.layout.fut_rgb_begin,
                        ps.tokens.begin() + ps.layout.fut_rgb_begin + ps.layout.m_tokens);
  out.depth_tokens.assign(ps.tokens.begin() + ps.layout.fut_depth_begin,
                          ps.tokens.begin() + ps.layout.fut_depth_begin + ps.layout.n_rays);
  return out;
}

// ---------------------------------------------------------------------------
// Batched gradients.

enum class LossKind { kMtp, kImitation, kSftTotal };

struct LossWeights {
  double rgb = 1.0;    // 0 disables the modality
  double depth = 1.0;
  double mtp = 1.0;    // weight of L_MTP inside the SFT total
};

struct GradResult {
  double loss = 0.0;
  double l_rgb = 0.0;
  double l_depth = 0.0;
  double l_imit = 0.0;
  std::map<std::string, Tensor> grads;
};

struct TrainSample {
  PackedSequence seq;
  Trajectory expert;
};

struct BuiltLoss {
  int total = -1;
  int l_rgb = -1;
  int l_depth = -1;
  int l_imit = -1;
};

inline BuiltLoss build_loss(Tape& t, const ForwardPass& fp, const TrainSample& sample,
                            const VocabLayout& vocab, LossKind kind, const LossWeights& lw) {
  BuiltLoss out;
  std::vector<int> terms;
  std::vector<double> coeffs;
  if (kind == LossKind::kMtp || kind == LossKind::kSftTotal) {
    const MtpLossVars mtp = mtp_loss(t, fp.logits, sample.seq, vocab);
    const double w = (kind == LossKind::kSftTotal) ? lw.mtp : 1.0;
    out.l_rgb = mtp.l_rgb;
    out.l_depth = mtp.l_depth;
    terms.push_back(mtp.l_rgb);
    coeffs.push_back(w * lw.rgb);
    terms.push_back(mtp.l_depth);
    coeffs.push_back(w * lw.depth);
  }
  if (kind == LossKind::kImitation || kind == LossKind::kSftTotal) {
    out.l_imit = imitation_loss(t, fp.mu, sample.expert);
    terms.push_back(out.l_imit);
    coeffs.push_back(1.0);
  }
  out.total = ad::weighted_sum(t, terms, coeffs);
  return out;
}

// Mean loss over a batch without building gradients.
inline double compute_loss(const ModelParams& params, const ModelConfig& cfg,
                           const std::vector<TrainSample>& batch, LossKind kind,
                           const LossWeights& lw = LossWeights{}) {
  double loss = 0.0;
  for (const TrainSample& sample : batch) {
    ForwardPass fp = forward(params, cfg, sample.seq, false);
    const BuiltLoss bl = build_loss(fp.tape, fp, sample, cfg.vocab, kind, lw);
    loss += fp.tape.scalar(bl.total) / batch.size();
  }
  return loss;
}

// Mean loss and gradients over the batch; throws on a non-finite loss.
inline GradResult compute_gradients(const ModelParams& params, const ModelConfig& cfg,
                                    const std::vector<TrainSample>& batch, LossKind kind,
                                    const LossWeights& lw = LossWeights{}) {
  if (batch.empty()) throw std::invalid_argument("compute_gradients: empty batch");
  GradResult out;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const TrainSample& sample : batch) {
    ForwardPass fp = forward(params, cfg, sample.seq, true);
    Tape& t = fp.tape;
    const BuiltLoss bl = build_loss(t, fp, sample, cfg.vocab, kind, lw);
    if (bl.l_rgb >= 0) out.l_rgb += t.scalar(bl.l_rgb) * inv_n;
    if (bl.l_depth >= 0) out.l_depth += t.scalar(bl.l_depth) * inv_n;
    if (bl.l_imit >= 0) out.l_imit += t.scalar(bl.l_imit) * inv_n;
    const int loss = bl.total;
    const double lv = t.scalar(loss);
    if (!std::isfinite(lv)) throw std::runtime_error("non-finite loss");
    out.loss += lv * inv_n;
    t.backward(loss);
    for (const auto& [name, var] : fp.param_vars) {
      if (!t.has_grad(var)) continue;
      const Tensor& g = t.grad(var);
      auto it = out.grads.find(name);
      if (it == out.grads.end()) {
        Tensor acc(g.rows, g.cols);
        for (size_t i = 0; i < g.size(); ++i) acc.data[i] = g.data[i] * inv_n;
        out.grads.emplace(name, std::move(acc));
      } else {
        for (size_t i = 0; i < g.size(); ++i) it->second.data[i] += g.data[i] * inv_n;
      }
    }
  }
  return out;
}

}  // namespace microdrive
