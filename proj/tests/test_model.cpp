#include <catch2/catch_amalgamated.hpp>

#include "microdrive/checkpoint.hpp"
#include "microdrive/model.hpp"
#include "microdrive/optimizer.hpp"

using namespace microdrive;

namespace {

RenderParams micro_render() {
  RenderParams rp;
  rp.grid_h = 3;
  rp.grid_w = 3;
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

TokenFrame random_frame(const RenderParams& rp, const VocabLayout& vocab, Rng& rng) {
  TokenFrame f;
  for (int i = 0; i < rp.tokens_per_frame(); ++i)
    f.rgb_tokens.push_back(vocab.encode_rgb(rng.below_int(vocab.n_rgb)));
  for (int i = 0; i < rp.n_rays; ++i)
    f.depth_tokens.push_back(vocab.encode_depth(rng.below_int(vocab.n_depth_bins)));
  return f;
}

PackedSequence random_sequence(const RenderParams& rp, const VocabLayout& vocab, Rng& rng,
                               bool with_action, double mask_ratio) {
  const SeqLayout layout = SeqLayout::make(rp);
  const auto feats = make_ego_features(rng.uniform(2, 5), rng.uniform(-0.3, 0.3), rng.below_int(4));
  const std::vector<TokenFrame> hist{random_frame(rp, vocab, rng), random_frame(rp, vocab, rng)};
  const TokenFrame fut = random_frame(rp, vocab, rng);
  std::optional<Trajectory> action;
  if (with_action) {
    Trajectory a;
    for (auto& w : a.waypoints) w = {rng.uniform(0, 16), rng.uniform(-3, 3), rng.uniform(-1, 1)};
    action = a;
  }
  return pack_sequence(rng.below_int(4), feats, hist, action, &fut, mask_ratio, vocab, layout, rng);
}

Trajectory random_traj(Rng& rng) {
  Trajectory tr;
  for (auto& w : tr.waypoints) w = {rng.uniform(0, 16), rng.uniform(-3, 3), rng.uniform(-1, 1)};
  return tr;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

}  // namespace

TEST_CASE("attention mask follows the causal-or-same-block rule") {
  // [text, text, img, img]
  std::vector<PosKind> kinds{PosKind::kText, PosKind::kText, PosKind::kHistImage,
                             PosKind::kHistImage};
  std::vector<int> block{-1, -1, 0, 0};
  auto m = build_attention_mask(kinds, block);
  CHECK(m->at(2, 3));        // intra-block, ahead of causal order
  CHECK_FALSE(m->at(1, 2));  // causal only
  CHECK(m->at(3, 2));
  CHECK(m->at(1, 0));
  for (int i = 0; i < 4; ++i) CHECK(m->at(i, i));

  // all-text: lower triangular
  std::vector<PosKind> txt(5, PosKind::kText);
  std::vector<int> nb(5, -1);
  auto mt = build_attention_mask(txt, nb);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) CHECK(mt->at(i, j) == (j <= i));
  }

  // one image block: all allowed
  std::vector<PosKind> img(4, PosKind::kFutRgb);
  std::vector<int> ib(4, 0);
  auto mi = build_attention_mask(img, ib);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) CHECK(mi->at(i, j));
  }
}

TEST_CASE("forward: restricted softmax sums to one and masks ranges exactly") {
  const RenderParams rp = micro_render();
  const ModelConfig cfg = micro_config(rp);
  const ModelParams params = ModelParams::init(cfg, 42);
  Rng rng(1);
  const PackedSequence ps = random_sequence(rp, cfg.vocab, rng, true, 0.7);
  ForwardPass fp = forward(params, cfg, ps, false);
  const Tensor& logits = fp.tape.val(fp.logits);
  for (int pos : ps.masked_positions) {
    int lo, hi;
    modality_range(ps, cfg.vocab, pos, &lo, &hi);
    const auto p = restricted_probs(logits, pos, lo, hi);
    double sum = 0.0;
    for (int j = 0; j < logits.cols; ++j) {
      if (j < lo || j >= hi) CHECK(p[j] == 0.0);
      sum += p[j];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("forward: deterministic and causally isolated") {
  const RenderParams rp = micro_render();
  const ModelConfig cfg = micro_config(rp);
  const ModelParams params = ModelParams::init(cfg, 7);
  Rng rng(2);
  const PackedSequence ps = random_sequence(rp, cfg.vocab, rng, true, 0.5);

  ForwardPass a = forward(params, cfg, ps, false);
  ForwardPass b = forward(params, cfg, ps, false);
  CHECK(a.tape.val(a.logits).data == b.tape.val(b.logits).data);

  // perturb a history token: the causal prefix (text/ego/action) is unchanged
  PackedSequence mod = ps;
  const int hpos = mod.layout.hist_begin + 2;
  mod.tokens[hpos] = cfg.vocab.encode_rgb((cfg.vocab.decode_rgb(mod.tokens[hpos]) + 1) % 4);
  ForwardPass c = forward(params, cfg, mod, false);
  const int prefix_end = ps.layout.action_begin + ps.layout.n_action;  // all causal labels
  for (int pos = 0; pos < prefix_end; ++pos) {
    for (int j = 0; j < cfg.vocab.total(); ++j) {
      CHECK(a.tape.val(a.logits).at(pos, j) == c.tape.val(c.logits).at(pos, j));
    }
  }

  // perturb an unmasked future token: prefix and history stay bitwise equal
  PackedSequence mod2 = ps;
  int fut_unmasked = -1;
  for (int i = 0; i < mod2.layout.m_tokens; ++i) {
    const int pos = mod2.layout.fut_rgb_begin + i;
    if (mod2.tokens[pos] != cfg.vocab.mask_id()) {
      fut_unmasked = pos;
      break;
    }
  }
  REQUIRE(fut_unmasked >= 0);
  mod2.tokens[fut_unmasked] =
      cfg.vocab.encode_rgb((cfg.vocab.decode_rgb(mod2.tokens[fut_unmasked]) + 1) % 4);
  ForwardPass d = forward(params, cfg, mod2, false);
  for (int pos = 0; pos < ps.layout.fut_rgb_begin; ++pos) {
    for (int j = 0; j < cfg.vocab.total(); ++j) {
      CHECK(a.tape.val(a.logits).at(pos, j) == d.tape.val(d.logits).at(pos, j));
    }
  }
  // ...but the trajectory output may react (the query sees everything)
  CHECK(a.tape.val(a.mu).data != d.tape.val(d.mu).data);
}

TEST_CASE("forward rejects sequences beyond max_seq_len") {
  const RenderParams rp = micro_render();
  ModelConfig cfg = micro_config(rp);
  cfg.max_seq_len = 10;
  const ModelParams params = ModelParams::init(micro_config(rp), 3);
  Rng rng(3);
  const PackedSequence ps = random_sequence(rp, cfg.vocab, rng, false, 0.5);
  CHECK_THROWS_AS(forward(params, cfg, ps, false), std::invalid_argument);
}

TEST_CASE("trajectory head: zero hidden state and zero biases give zero waypoints") {
  const RenderParams rp = micro_render();
  const ModelConfig cfg = micro_config(rp);
  const ModelParams params = ModelParams::init(cfg, 4);
  Tape t(false);
  const int zero_h = t.constant(Tensor(1, cfg.d_model));
  const int w1 = t.constant(params.at("traj_w1"));
  const int b1 = t.constant(params.at("traj_b1"));
  const int w2 = t.constant(params.at("traj_w2"));
  const int b2 = t.constant(params.at("traj_b2"));
  const int mu = ad::add_rowvec(t, ad::matmul(t, ad::tanh_op(t, ad::add_rowvec(t, ad::matmul(t, zero_h, w1), b1)), w2), b2);
  for (double v : t.val(mu).data) CHECK(v == 0.0);
  CHECK(t.val(mu).cols == cfg.traj_out());
}

TEST_CASE("sample_trajectory: temperature zero, mode density, sample mean") {
  Tensor mu(1, 24), log_std(1, 24);
  Rng init(5);
  for (int d = 0; d < 24; ++d) {
    mu.data[d] = init.uniform(-2, 2);
    log_std.data[d] = std::log(0.5);
  }
  Rng rng(6);
  const SampledTrajectory s0 = sample_trajectory(mu, log_std, rng, 0.0);
  CHECK(trajectory_flat(s0.traj) == std::vector<double>(mu.data));
  double expect_mode = 0.0;
  for (int d = 0; d < 24; ++d) expect_mode += -std::log(0.5) - 0.5 * std::log(2.0 * kPi);
  CHECK(s0.log_prob == Catch::Approx(expect_mode).epsilon(1e-12));

  const int n = 100000;
  std::vector<double> mean(24, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto s = sample_trajectory(mu, log_std, rng, 1.0);
    const auto flat = trajectory_flat(s.traj);
    for (int d = 0; d < 24; ++d) mean[d] += flat[d] / n;
  }
  for (int d = 0; d < 24; ++d) {
    CHECK(std::abs(mean[d] - mu.data[d]) <= 3.5 * 0.5 / std::sqrt(double(n)));
  }
}

TEST_CASE("log_prob integrates to 1 along a 1-D slice (importance check)") {
  Tensor mu(1, 24), log_std(1, 24);
  Rng init(8);
  for (int d = 0; d < 24; ++d) {
    mu.data[d] = init.uniform(-1, 1);
    log_std.data[d] = std::log(init.uniform(0.3, 0.8));
  }
  std::vector<double> tau(mu.data);
  // density of the fixed dims: full density integrated over dim 0
  double fixed_lp = 0.0;
  for (int d = 1; d < 24; ++d) {
    const double s = std::exp(log_std.data[d]);
    const double z = (tau[d] - mu.data[d]) / s;
    fixed_lp += -0.5 * z * z - log_std.data[d] - 0.9189385332046727;
  }
  const double sigma0 = std::exp(log_std.data[0]);
  const double lo = mu.data[0] - 8 * sigma0, hi = mu.data[0] + 8 * sigma0;
  Rng rng(9);
  const int n = 200000;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    tau[0] = rng.uniform(lo, hi);
    acc += std::exp(gaussian_log_prob(tau.data(), mu, log_std)) / n;
  }
  const double integral = acc * (hi - lo);
  CHECK(integral / std::exp(fixed_lp) == Catch::Approx(1.0).margin(0.01));
}

TEST_CASE("mtp_loss: uniform logits, empty mask, hand-computed cross entropy") {
  const RenderParams rp = micro_render();
  const ModelConfig cfg = micro_config(rp);
  const VocabLayout& vocab = cfg.vocab;
  Rng rng(10);
  PackedSequence ps = random_sequence(rp, vocab, rng, false, 0.5);

  // uniform logits: all zeros
  {
    Tape t(false);
    const int logits = t.constant(Tensor(ps.layout.total, vocab.total()));
    const MtpLossVars v = mtp_loss(t, logits, ps, vocab);
    bool has_rgb = false, has_depth = false;
    for (const auto& [pos, tgt] : ps.targets) {
      has_rgb = has_rgb || ps.kinds[pos] == PosKind::kFutRgb;
      has_depth = has_depth || ps.kinds[pos] == PosKind::kFutDepth;
    }
    if (has_rgb) CHECK(t.scalar(v.l_rgb) == Catch::Approx(std::log(4.0)).epsilon(1e-12));
    if (has_depth) {
      CHECK(t.scalar(v.l_depth) ==
            Catch::Approx(std::log(double(vocab.n_depth_bins))).epsilon(1e-12));
    }
  }

  // empty masked set
  {
    PackedSequence none = ps;
    none.targets.clear();
    none.masked_positions.clear();
    Tape t(false);
    const int logits = t.constant(Tensor(ps.layout.total, vocab.total()));
    const MtpLossVars v = mtp_loss(t, logits, none, vocab);
    CHECK(t.scalar(v.l_mtp) == 0.0);
  }

  // two masked rgb tokens with hand-set logits
  {
    PackedSequence two = ps;
    two.targets = {{ps.layout.fut_rgb_begin, vocab.encode_rgb(2)},
                   {ps.layout.fut_rgb_begin + 1, vocab.encode_rgb(0)}};
    two.masked_positions = {ps.layout.fut_rgb_begin, ps.layout.fut_rgb_begin + 1};
    Tensor logits(ps.layout.total, vocab.total());
    const double l0[4] = {0.3, -1.2, 0.8, 0.1};
    const double l1[4] = {1.5, 0.2, -0.4, 0.9};
    for (int c = 0; c < 4; ++c) {
      logits.at(ps.layout.fut_rgb_begin, vocab.encode_rgb(c)) = l0[c];
      logits.at(ps.layout.fut_rgb_begin + 1, vocab.encode_rgb(c)) = l1[c];
    }
    auto ce = [](const double* l, int tgt) {
      double z = 0.0;
      for (int c = 0; c < 4; ++c) z += std::exp(l[c]);
      return -(l[tgt] - std::log(z));
    };
    const double expect = 0.5 * (ce(l0, 2) + ce(l1, 0));
    Tape t(false);
    const MtpLossVars v = mtp_loss(t, t.constant(std::move(logits)), two, vocab);
    CHECK(std::abs(t.scalar(v.l_rgb) - expect) <= 1e-10);
  }
}

TEST_CASE("mtp_loss rejects targets outside the modality range") {
  const RenderParams rp = micro_render();
  const ModelConfig cfg = micro_config(rp);
  Rng rng(11);
  PackedSequence ps = random_sequence(rp, cfg.vocab, rng, false, 0.5);
  REQUIRE(!ps.targets.empty());
  ps.targets[0].second = cfg.vocab.mask_id();  // not a modality id
  Tape t(false);
  const int logits = t.constant(Tensor(ps.layout.total, cfg.vocab.total()));
  CHECK_THROWS_AS(mtp_loss(t, logits, ps, cfg.vocab), std::out_of_range);
}

TEST_CASE("imitation loss: exact match, single offset, theta wrapping") {
  Rng rng(12);
  const Trajectory expert = random_traj(rng);
  auto loss_of = [&](const Trajectory& mu_traj) {
    Tape t(false);
    Tensor mu(1, 24);
    mu.data = trajectory_flat(mu_traj);
    return t.scalar(imitation_loss(t, t.constant(std::move(mu)), expert));
  };
  CHECK(loss_of(expert) == 0.0);
  Trajectory off = expert;
  off.waypoints[3].y += 0.24;
  CHECK(loss_of(off) == Catch::Approx(0.01).epsilon(1e-12));
  Trajectory wrapped = expert;
  wrapped.waypoints[5].theta += 2.0 * kPi;
  CHECK(loss_of(wrapped) == Catch::Approx(0.0).margin(1e-12));
}

// ---------------------------------------------------------------------------
// Gradient checks against central finite differences (double precision).

namespace {

double fd_check_losses(ModelParams& params, const ModelConfig& cfg,
                       const std::vector<TrainSample>& batch, LossKind kind,
                       const LossWeights& lw) {
  const GradResult gr = compute_gradients(params, cfg, batch, kind, lw);
  const double h = 1e-4;
  double worst = 0.0;
  for (auto& [name, tensor] : params.arrays) {
    for (size_t i = 0; i < tensor.size(); ++i) {
      const double save = tensor.data[i];
      tensor.data[i] = save + h;
      const double lp = compute_loss(params, cfg, batch, kind, lw);
      tensor.data[i] = save - h;
      const double lm = compute_loss(params, cfg, batch, kind, lw);
      tensor.data[i] = save;
      const double fd = (lp - lm) / (2.0 * h);
      const auto it = gr.grads.find(name);
      const double an = (it != gr.grads.end()) ? it->second.data[i] : 0.0;
      worst = std::max(worst, rel_err(fd, an));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("analytic gradients match finite differences for every loss") {
  const RenderParams rp = micro_render();
  const ModelConfig cfg = micro_config(rp);
  ModelParams params = ModelParams::init(cfg, 21);
  Rng rng(22);
  std::vector<TrainSample> batch;
  batch.push_back({random_sequence(rp, cfg.vocab, rng, true, 0.8), random_traj(rng)});
  batch.push_back({random_sequence(rp, cfg.vocab, rng, false, 0.6), random_traj(rng)});

  CHECK(fd_check_losses(params, cfg, batch, LossKind::kMtp, LossWeights{}) <= 1e-3);
  CHECK(fd_check_losses(params, cfg, batch, LossKind::kImitation, LossWeights{}) <= 1e-3);
  CHECK(fd_check_losses(params, cfg, batch, LossKind::kSftTotal, LossWeights{}) <= 1e-3);
}

TEST_CASE("mtp gradients do not touch the trajectory head") {
  const RenderParams rp = micro_render();
  const ModelConfig cfg = micro_config(rp);
  ModelParams params = ModelParams::init(cfg, 31);
  Rng rng(32);
  std::vector<TrainSample> batch{{random_sequence(rp, cfg.vocab, rng, true, 0.9), random_traj(rng)}};
  const GradResult gr = compute_gradients(params, cfg, batch, LossKind::kMtp, LossWeights{});
  for (const char* name : {"traj_w1", "traj_b1", "traj_w2", "traj_b2", "log_std"}) {
    const auto it = gr.grads.find(name);
    if (it == gr.grads.end()) continue;
    for (double v : it->second.data) CHECK(v == 0.0);
  }
}

TEST_CASE("surrogate gradients through the policy match finite differences") {
  const RenderParams rp = micro_render();
  const ModelConfig cfg = micro_config(rp);
  ModelParams params = ModelParams::init(cfg, 41);
  Rng rng(42);
  const PackedSequence ps = random_sequence(rp, cfg.vocab, rng, false, 1.0);

  // frozen candidate draws and constants
  ForwardPass fp0 = forward(params, cfg, ps, false);
  const Tensor mu0 = fp0.tape.val(fp0.mu);
  const Tensor ls0 = fp0.tape.val(fp0.log_std);
  const int G = 3;
  std::vector<std::vector<double>> taus(G);
  std::vector<double> old_lp(G), ref_lp(G);
  const std::vector<double> adv{0.9, -0.2, -0.7};
  for (int i = 0; i < G; ++i) {
    taus[i].resize(24);
    for (int d = 0; d < 24; ++d) taus[i][d] = mu0.data[d] + 0.5 * rng.normal();
    old_lp[i] = gaussian_log_prob(taus[i].data(), mu0, ls0);
    ref_lp[i] = old_lp[i] + rng.uniform(-0.1, 0.1);
  }
  const double eps = 0.1, beta = 0.01;

  auto loss_at = [&](bool with_grad, std::map<std::string, Tensor>* grads) {
    ForwardPass fp = forward(params, cfg, ps, with_grad);
    Tape& t = fp.tape;
    std::vector<int> lps;
    for (int i = 0; i < G; ++i) lps.push_back(ad::gauss_logprob(t, fp.mu, fp.log_std, taus[i]));
    const int new_lp = ad::stack_scalars(t, lps);
    const int L = ad::grpo_surrogate(t, new_lp, old_lp, ref_lp, adv, eps, beta);
    if (with_grad) {
      t.backward(L);
      for (const auto& [name, var] : fp.param_vars) {
        if (t.has_grad(var)) (*grads)[name] = t.grad(var);
      }
    }
    return t.scalar(L);
  };

  std::map<std::string, Tensor> grads;
  loss_at(true, &grads);
  const double h = 1e-4;
  double worst = 0.0;
  for (auto& [name, tensor] : params.arrays) {
    for (size_t i = 0; i < tensor.size(); ++i) {
      const double save = tensor.data[i];
      tensor.data[i] = save + h;
      const double lp = loss_at(false, nullptr);
      tensor.data[i] = save - h;
      const double lm = loss_at(false, nullptr);
      tensor.data[i] = save;
      const double fd = (lp - lm) / (2.0 * h);
      const auto it = grads.find(name);
      const double an = (it != grads.end()) ? it->second.data[i] : 0.0;
      worst = std::max(worst, rel_err(fd, an));
    }
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("gradient of a constant loss is zero") {
  Tape t(true);
  Tensor x(1, 4, 2.0);
  const int leaf = t.leaf(std::move(x), true);
  const int zero = ad::scale(t, ad::weighted_sum(t, {ad::mae_wrapped(t, leaf, {2.0, 2.0, 2.0, 2.0},
                                                                     {false, false, false, false})},
                                                 {1.0}),
                             0.0);
  t.backward(zero);
  for (double v : t.grad(leaf).data) CHECK(v == 0.0);
}

// ---------------------------------------------------------------------------
// Entropy.

TEST_CASE("token_entropy: uniform and one-hot closed forms on the real model") {
  const RenderParams rp = micro_render();
  const ModelConfig cfg = micro_config(rp);
  ModelParams params = ModelParams::init(cfg, 51);
  Rng rng(52);
  PackedSequence ps = random_sequence(rp, cfg.vocab, rng, true, 0.0);
  // all-masked inference packing
  const SeqLayout layout = ps.layout;
  for (int i = 0; i < layout.future_len(); ++i) {
    ps.tokens[layout.fut_rgb_begin + i] = cfg.vocab.mask_id();
    ps.masked_positions.push_back(layout.fut_rgb_begin + i);
  }
  ps.targets.clear();

  // zero head: uniform distributions, entropy hits the weighted ceiling
  for (auto& v : params.at("head_w").data) v = 0.0;
  for (auto& v : params.at("head_b").data) v = 0.0;
  const double ceiling = entropy_ceiling(layout, cfg.vocab);
  CHECK(std::abs(token_entropy(params, cfg, ps) - ceiling) <= 1e-9);

  // a huge bias at one id per range: one-hot, entropy 0
  params.at("head_b").data[cfg.vocab.encode_rgb(1)] = 500.0;
  params.at("head_b").data[cfg.vocab.encode_depth(3)] = 500.0;
  CHECK(token_entropy(params, cfg, ps) <= 1e-9);
}

TEST_CASE("token_entropy matches a brute-force double sum") {
  const RenderParams rp = micro_render();
  const ModelConfig cfg = micro_config(rp);
  Rng rng(53);
  for (int trial = 0; trial < 10; ++trial) {
    const ModelParams params = ModelParams::init(cfg, 54 + trial);
    PackedSequence ps = random_sequence(rp, cfg.vocab, rng, trial % 2 == 0, 1.0);
    ForwardPass fp = forward(params, cfg, ps, false);
    const Tensor& logits = fp.tape.val(fp.logits);
    double oracle = 0.0;
    for (int pos : ps.masked_positions) {
      int lo, hi;
      modality_range(ps, cfg.vocab, pos, &lo, &hi);
      long double z = 0.0;
      for (int j = lo; j < hi; ++j) z += std::exp((long double)logits.at(pos, j));
      long double h = 0.0;
      for (int j = lo; j < hi; ++j) {
        const long double p = std::exp((long double)logits.at(pos, j)) / z;
        h -= p * std::log(p);
      }
      oracle += static_cast<double>(h) / ps.masked_positions.size();
    }
    CHECK(std::abs(token_entropy(params, cfg, ps) - oracle) <= 1e-10);
    const double H = token_entropy(params, cfg, ps);
    CHECK(H >= 0.0);
    CHECK(H <= std::log(double(std::max(cfg.vocab.n_rgb, cfg.vocab.n_depth_bins))) + 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Generation.

TEST_CASE("generate_future with one step is the all-masked argmax") {
  const RenderParams rp = micro_render();
  const ModelConfig cfg = micro_config(rp);
  const ModelParams params = ModelParams::init(cfg, 61);
  Rng rng(62);
  PackedSequence ps = random_sequence(rp, cfg.vocab, rng, true, 1.0);
  ps.targets.clear();  // inference

  ForwardPass fp = forward(params, cfg, ps, false);
  const Tensor& logits = fp.tape.val(fp.logits);
  const TokenFrame got = generate_future(params, cfg, ps, 1);

  for (int i = 0; i < rp.tokens_per_frame(); ++i) {
    const int pos = ps.layout.fut_rgb_begin + i;
    int best = cfg.vocab.rgb_base();
    for (int j = best + 1; j < cfg.vocab.rgb_base() + 4; ++j) {
      if (logits.at(pos, j) > logits.at(pos, best)) best = j;
    }
    CHECK(got.rgb_tokens[i] == best);
    CHECK(cfg.vocab.is_rgb(got.rgb_tokens[i]));
  }
  for (int i = 0; i < rp.n_rays; ++i) CHECK(cfg.vocab.is_depth(got.depth_tokens[i]));
}

TEST_CASE("generate_future fills everything within the step budget") {
  const RenderParams rp = micro_render();
  const ModelConfig cfg = micro_config(rp);
  const ModelParams params = ModelParams::init(cfg, 63);
  Rng rng(64);
  for (int steps : {1, 2, 4, 7}) {
    PackedSequence ps = random_sequence(rp, cfg.vocab, rng, false, 1.0);
    ps.targets.clear();
    const TokenFrame f = generate_future(params, cfg, ps, steps);
    for (int id : f.rgb_tokens) CHECK(cfg.vocab.is_rgb(id));
    for (int id : f.depth_tokens) CHECK(cfg.vocab.is_depth(id));
  }
}

// ---------------------------------------------------------------------------
// Checkpointing.

TEST_CASE("checkpoint round trip is bitwise and mismatches fail loudly") {
  const RenderParams rp = micro_render();
  const ModelConfig cfg = micro_config(rp);
  const ModelParams params = ModelParams::init(cfg, 71);
  const std::string path = "ckpt_test.bin";
  save_checkpoint(path, cfg, params);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.config == cfg);
  CHECK(back.params.same_values(params));

  // forward after a round trip is bitwise identical
  Rng rng(72);
  const PackedSequence ps = random_sequence(rp, cfg.vocab, rng, true, 0.5);
  ForwardPass a = forward(params, cfg, ps, false);
  ForwardPass b = forward(back.params, back.config, ps, false);
  CHECK(a.tape.val(a.logits).data == b.tape.val(b.logits).data);

  // corrupt an array name: load must fail
  std::ifstream is(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  is.close();
  const size_t at = bytes.find("tok_emb");
  REQUIRE(at != std::string::npos);
  bytes[at] = 'X';
  std::ofstream os(path, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  os.close();
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  std::remove(path.c_str());
}
