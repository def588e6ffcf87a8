#pragma once

// Minimal reverse-mode tape over Tensor. Creation order is the topological
// order; backward walks it in reverse. With grads disabled the same ops
// compute values only, so inference and training share one code path.

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "microdrive/geometry.hpp"
#include "microdrive/tensor.hpp"

namespace microdrive {

struct AttentionMask {
  int n = 0;
  std::vector<uint8_t> allowed;  // n x n
  bool at(int i, int j) const { return allowed[static_cast<size_t>(i) * n + j] != 0; }
  void set(int i, int j, bool v) { allowed[static_cast<size_t>(i) * n + j] = v ? 1 : 0; }
};

class Tape {
 public:
  using BackFn = std::function<void(Tape&, int self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  int leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad && grad_enabled_, nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int constant(Tensor value) { return leaf(std::move(value), false); }

  int scalar_constant(double v) {
    Tensor t(1, 1);
    t.data[0] = v;
    return constant(std::move(t));
  }

  int push(Tensor value, const std::vector<int>& parents, BackFn back) {
    bool req = false;
    if (grad_enabled_) {
      for (int p : parents) req = req || nodes_[p].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Tensor{}, req, req ? std::move(back) : nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor& val(int v) const { return nodes_[v].value; }
  Tensor& val(int v) { return nodes_[v].value; }
  double scalar(int v) const { return nodes_[v].value.data[0]; }
  bool requires_grad(int v) const { return nodes_[v].requires_grad; }

  // Gradient buffer, allocated to the value's shape on first touch.
  Tensor& grad(int v) {
    Node& n = nodes_[v];
    if (n.grad.data.empty()) n.grad = Tensor(n.value.rows, n.value.cols);
    return n.grad;
  }
  bool has_grad(int v) const { return !nodes_[v].grad.data.empty(); }

  void backward(int loss) {
    if (!grad_enabled_) throw std::logic_error("backward on a no-grad tape");
    if (nodes_[loss].value.size() != 1)
      throw std::invalid_argument("backward: loss must be scalar");
    grad(loss).data[0] = 1.0;
    for (int i = loss; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && !n.grad.data.empty() && n.requires_grad) n.back(*this, i);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackFn back;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

// ---------------------------------------------------------------------------
// Ops. Backward callbacks accumulate into parent gradients.

namespace ad {

inline int matmul(Tape& t, int a, int b) {
  Tensor out;
  matmul_acc(t.val(a), t.val(b), out, false);
  return t.push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a)) matmul_tB_acc(g, t.val(b), t.grad(a), true);   // dA += g B^T
    if (t.requires_grad(b)) matmul_tA_acc(t.val(a), g, t.grad(b));         // dB += A^T g
  });
}

// C = A * B^T
inline int matmul_bt(Tape& t, int a, int b) {
  Tensor out;
  matmul_tB_acc(t.val(a), t.val(b), out, false);
  return t.push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a)) matmul_acc(g, t.val(b), t.grad(a), true);  // dA += g B
    if (t.requires_grad(b)) matmul_tA_acc(g, t.val(a), t.grad(b));     // dB += g^T A
  });
}

inline int add(Tape& t, int a, int b) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  if (!A.same_shape(B)) throw std::invalid_argument("add: shape mismatch");
  Tensor out = A;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
  return t.push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    for (int p : {a, b}) {
      if (!t.requires_grad(p)) continue;
      Tensor& gp = t.grad(p);
      for (size_t i = 0; i < g.size(); ++i) gp.data[i] += g.data[i];
    }
  });
}

// a: m x n, b: 1 x n broadcast over rows
inline int add_rowvec(Tape& t, int a, int b) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  if (B.rows != 1 || B.cols != A.cols) throw std::invalid_argument("add_rowvec: shape");
  Tensor out = A;
  for (int i = 0; i < A.rows; ++i) {
    double* r = out.row(i);
    for (int j = 0; j < A.cols; ++j) r[j] += B.data[j];
  }
  return t.push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a);
      for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b);
      for (int i = 0; i < g.rows; ++i) {
        const double* r = g.row(i);
        for (int j = 0; j < g.cols; ++j) gb.data[j] += r[j];
      }
    }
  });
}

inline int scale(Tape& t, int a, double s) {
  Tensor out = t.val(a);
  for (auto& v : out.data) v *= s;
  return t.push(std::move(out), {a}, [a, s](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a);
    for (size_t i = 0; i < g.size(); ++i) ga.data[i] += s * g.data[i];
  });
}

inline int tanh_op(Tape& t, int a) {
  Tensor out = t.val(a);
  for (auto& v : out.data) v = std::tanh(v);
  return t.push(std::move(out), {a}, [a](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.val(self);
    Tensor& ga = t.grad(a);
    for (size_t i = 0; i < g.size(); ++i) ga.data[i] += (1.0 - y.data[i] * y.data[i]) * g.data[i];
  });
}

inline int gelu(Tape& t, int a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor out = t.val(a);
  for (auto& v : out.data) {
    const double u = kC * (v + kA * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  return t.push(std::move(out), {a}, [a](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.val(a);
    Tensor& ga = t.grad(a);
    for (size_t i = 0; i < g.size(); ++i) {
      const double v = x.data[i];
      const double u = kC * (v + kA * v * v * v);
      const double th = std::tanh(u);
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * v * v);
      ga.data[i] += d * g.data[i];
    }
  });
}

// Per-row layer norm with learnable gain/bias (both 1 x n).
inline int layernorm(Tape& t, int x, int gain, int bias, double eps = 1e-5) {
  const Tensor& X = t.val(x);
  const Tensor& G = t.val(gain);
  const Tensor& B = t.val(bias);
  if (G.cols != X.cols || B.cols != X.cols) throw std::invalid_argument("layernorm: shape");
  Tensor out(X.rows, X.cols);
  for (int i = 0; i < X.rows; ++i) {
    const double* r = X.row(i);
    double mean = 0.0;
    for (int j = 0; j < X.cols; ++j) mean += r[j];
    mean /= X.cols;
    double var = 0.0;
    for (int j = 0; j < X.cols; ++j) var += (r[j] - mean) * (r[j] - mean);
    var /= X.cols;
    const double inv = 1.0 / std::sqrt(var + eps);
    double* o = out.row(i);
    for (int j = 0; j < X.cols; ++j) o[j] = G.data[j] * ((r[j] - mean) * inv) + B.data[j];
  }
  return t.push(std::move(out), {x, gain, bias}, [x, gain, bias, eps](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& X = t.val(x);
    const Tensor& G = t.val(gain);
    const int n = X.cols;
    for (int i = 0; i < X.rows; ++i) {
      const double* r = X.row(i);
      const double* gr = g.row(i);
      double mean = 0.0;
      for (int j = 0; j < n; ++j) mean += r[j];
      mean /= n;
      double var = 0.0;
      for (int j = 0; j < n; ++j) var += (r[j] - mean) * (r[j] - mean);
      var /= n;
      const double inv = 1.0 / std::sqrt(var + eps);
      // xhat, gy = g .* gain, and the two row means needed for dx
      double mean_gy = 0.0, mean_gy_xhat = 0.0;
      for (int j = 0; j < n; ++j) {
        const double xhat = (r[j] - mean) * inv;
        const double gy = gr[j] * G.data[j];
        mean_gy += gy;
        mean_gy_xhat += gy * xhat;
      }
      mean_gy /= n;
      mean_gy_xhat /= n;
      if (t.requires_grad(x)) {
        double* gx = t.grad(x).row(i);
        for (int j = 0; j < n; ++j) {
          const double xhat = (r[j] - mean) * inv;
          const double gy = gr[j] * G.data[j];
          gx[j] += (gy - mean_gy - xhat * mean_gy_xhat) * inv;
        }
      }
      if (t.requires_grad(gain)) {
        double* gg = t.grad(gain).row(0);
        for (int j = 0; j < n; ++j) gg[j] += gr[j] * (r[j] - mean) * inv;
      }
      if (t.requires_grad(bias)) {
        double* gb = t.grad(bias).row(0);
        for (int j = 0; j < n; ++j) gb[j] += gr[j];
      }
    }
  });
}

inline int gather_rows(Tape& t, int table, std::vector<int> idx) {
  const Tensor& T = t.val(table);
  Tensor out(static_cast<int>(idx.size()), T.cols);
  for (size_t i = 0; i < idx.size(); ++i) {
    const double* src = T.row(idx[i]);
    double* dst = out.row(static_cast<int>(i));
    for (int j = 0; j < T.cols; ++j) dst[j] = src[j];
  }
  return t.push(std::move(out), {table}, [table, idx = std::move(idx)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gt = t.grad(table);
    for (size_t i = 0; i < idx.size(); ++i) {
      const double* src = g.row(static_cast<int>(i));
      double* dst = gt.row(idx[i]);
      for (int j = 0; j < g.cols; ++j) dst[j] += src[j];
    }
  });
}

// Rows of `src` placed at `rows` in a fresh (total x cols) tensor.
inline int scatter_rows(Tape& t, int src, std::vector<int> rows, int total) {
  const Tensor& S = t.val(src);
  if (static_cast<int>(rows.size()) != S.rows) throw std::invalid_argument("scatter_rows: count");
  Tensor out(total, S.cols);
  for (size_t i = 0; i < rows.size(); ++i) {
    const double* s = S.row(static_cast<int>(i));
    double* d = out.row(rows[i]);
    for (int j = 0; j < S.cols; ++j) d[j] = s[j];
  }
  return t.push(std::move(out), {src}, [src, rows = std::move(rows)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gs = t.grad(src);
    for (size_t i = 0; i < rows.size(); ++i) {
      const double* s = g.row(rows[i]);
      double* d = gs.row(static_cast<int>(i));
      for (int j = 0; j < g.cols; ++j) d[j] += s[j];
    }
  });
}

inline int slice_rows(Tape& t, int a, int row0, int nrows) {
  const Tensor& A = t.val(a);
  Tensor out(nrows, A.cols);
  for (int i = 0; i < nrows; ++i) {
    const double* s = A.row(row0 + i);
    double* d = out.row(i);
    for (int j = 0; j < A.cols; ++j) d[j] = s[j];
  }
  return t.push(std::move(out), {a}, [a, row0, nrows](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a);
    for (int i = 0; i < nrows; ++i) {
      const double* s = g.row(i);
      double* d = ga.row(row0 + i);
      for (int j = 0; j < g.cols; ++j) d[j] += s[j];
    }
  });
}

inline int slice_cols(Tape& t, int a, int col0, int ncols) {
  const Tensor& A = t.val(a);
  Tensor out(A.rows, ncols);
  for (int i = 0; i < A.rows; ++i) {
    const double* s = A.row(i) + col0;
    double* d = out.row(i);
    for (int j = 0; j < ncols; ++j) d[j] = s[j];
  }
  return t.push(std::move(out), {a}, [a, col0, ncols](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a);
    for (int i = 0; i < g.rows; ++i) {
      const double* s = g.row(i);
      double* d = ga.row(i) + col0;
      for (int j = 0; j < ncols; ++j) d[j] += s[j];
    }
  });
}

inline int concat_cols(Tape& t, const std::vector<int>& parts) {
  int cols = 0;
  const int rows = t.val(parts[0]).rows;
  for (int p : parts) cols += t.val(p).cols;
  Tensor out(rows, cols);
  int off = 0;
  for (int p : parts) {
    const Tensor& P = t.val(p);
    for (int i = 0; i < rows; ++i) {
      const double* s = P.row(i);
      double* d = out.row(i) + off;
      for (int j = 0; j < P.cols; ++j) d[j] = s[j];
    }
    off += P.cols;
  }
  return t.push(std::move(out), parts, [parts](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    int off = 0;
    for (int p : parts) {
      const int pc = t.val(p).cols;
      if (t.requires_grad(p)) {
        Tensor& gp = t.grad(p);
        for (int i = 0; i < g.rows; ++i) {
          const double* s = g.row(i) + off;
          double* d = gp.row(i);
          for (int j = 0; j < pc; ++j) d[j] += s[j];
        }
      }
      off += pc;
    }
  });
}

// Row softmax over allowed entries only; disallowed entries are exactly 0.
inline int masked_softmax(Tape& t, int scores, std::shared_ptr<const AttentionMask> mask) {
  const Tensor& S = t.val(scores);
  if (S.rows != mask->n || S.cols != mask->n) throw std::invalid_argument("masked_softmax: shape");
  Tensor out(S.rows, S.cols);
  for (int i = 0; i < S.rows; ++i) {
    const double* r = S.row(i);
    double* o = out.row(i);
    double mx = -kInf;
    for (int j = 0; j < S.cols; ++j) {
      if (mask->at(i, j)) mx = std::max(mx, r[j]);
    }
    double z = 0.0;
    for (int j = 0; j < S.cols; ++j) {
      if (mask->at(i, j)) {
        o[j] = std::exp(r[j] - mx);
        z += o[j];
      }
    }
    const double inv = 1.0 / z;
    for (int j = 0; j < S.cols; ++j) {
      if (mask->at(i, j)) o[j] *= inv;
    }
  }
  return t.push(std::move(out), {scores}, [scores, mask](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& p = t.val(self);
    Tensor& gs = t.grad(scores);
    for (int i = 0; i < g.rows; ++i) {
      const double* gr = g.row(i);
      const double* pr = p.row(i);
      double dot = 0.0;
      for (int j = 0; j < g.cols; ++j) {
        if (mask->at(i, j)) dot += gr[j] * pr[j];
      }
      double* o = gs.row(i);
      for (int j = 0; j < g.cols; ++j) {
        if (mask->at(i, j)) o[j] += pr[j] * (gr[j] - dot);
      }
    }
  });
}

// Mean cross entropy of range-restricted softmax at the given positions.
// Targets must fall inside [lo, hi). Empty position list gives a 0 constant.
inline int restricted_ce(Tape& t, int logits, std::vector<std::pair<int, int>> pos_targets,
                         int lo, int hi) {
  if (pos_targets.empty()) return t.scalar_constant(0.0);
  const Tensor& L = t.val(logits);
  double loss = 0.0;
  for (const auto& [pos, tgt] : pos_targets) {
    if (tgt < lo || tgt >= hi) throw std::out_of_range("restricted_ce: target outside range");
    const double* r = L.row(pos);
    double mx = -kInf;
    for (int j = lo; j < hi; ++j) mx = std::max(mx, r[j]);
    double z = 0.0;
    for (int j = lo; j < hi; ++j) z += std::exp(r[j] - mx);
    loss += -(r[tgt] - mx - std::log(z));
  }
  loss /= static_cast<double>(pos_targets.size());
  Tensor out(1, 1);
  out.data[0] = loss;
  return t.push(std::move(out), {logits},
                [logits, pos_targets = std::move(pos_targets), lo, hi](Tape& t, int self) {
                  const double go = t.grad(self).data[0] / pos_targets.size();
                  const Tensor& L = t.val(logits);
                  Tensor& gl = t.grad(logits);
                  for (const auto& [pos, tgt] : pos_targets) {
                    const double* r = L.row(pos);
                    double* g = gl.row(pos);
                    double mx = -kInf;
                    for (int j = lo; j < hi; ++j) mx = std::max(mx, r[j]);
                    double z = 0.0;
                    for (int j = lo; j < hi; ++j) z += std::exp(r[j] - mx);
                    for (int j = lo; j < hi; ++j) {
                      const double p = std::exp(r[j] - mx) / z;
                      g[j] += go * (p - (j == tgt ? 1.0 : 0.0));
                    }
                  }
                });
}

// Mean absolute error with optional angular wrapping per dimension.
inline int mae_wrapped(Tape& t, int mu, std::vector<double> target, std::vector<bool> wrap_dim) {
  const Tensor& M = t.val(mu);
  if (M.size() != target.size()) throw std::invalid_argument("mae_wrapped: size");
  const int n = static_cast<int>(target.size());
  double loss = 0.0;
  for (int d = 0; d < n; ++d) {
    double diff = M.data[d] - target[d];
    if (wrap_dim[d]) diff = std::remainder(diff, 2.0 * kPi);
    loss += std::abs(diff);
  }
  loss /= n;
  Tensor out(1, 1);
  out.data[0] = loss;
  return t.push(std::move(out), {mu},
                [mu, target = std::move(target), wrap_dim = std::move(wrap_dim)](Tape& t, int self) {
                  const double go = t.grad(self).data[0] / target.size();
                  const Tensor& M = t.val(mu);
                  Tensor& g = t.grad(mu);
                  for (size_t d = 0; d < target.size(); ++d) {
                    double diff = M.data[d] - target[d];
                    if (wrap_dim[d]) diff = std::remainder(diff, 2.0 * kPi);
                    g.data[d] += go * (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0));
                  }
                });
}

// log N(tau; mu, sigma^2) with sigma = exp(log_std); mu and log_std are 1 x D.
inline int gauss_logprob(Tape& t, int mu, int log_std, std::vector<double> tau) {
  const Tensor& M = t.val(mu);
  const Tensor& LS = t.val(log_std);
  const int n = static_cast<int>(tau.size());
  if (static_cast<int>(M.size()) != n || static_cast<int>(LS.size()) != n)
    throw std::invalid_argument("gauss_logprob: size");
  constexpr double kHalfLog2Pi = 0.9189385332046727;
  double lp = 0.0;
  for (int d = 0; d < n; ++d) {
    const double s = std::exp(LS.data[d]);
    const double z = (tau[d] - M.data[d]) / s;
    lp += -0.5 * z * z - LS.data[d] - kHalfLog2Pi;
  }
  Tensor out(1, 1);
  out.data[0] = lp;
  return t.push(std::move(out), {mu, log_std},
                [mu, log_std, tau = std::move(tau)](Tape& t, int self) {
                  const double go = t.grad(self).data[0];
                  const Tensor& M = t.val(mu);
                  const Tensor& LS = t.val(log_std);
                  for (size_t d = 0; d < tau.size(); ++d) {
                    const double s = std::exp(LS.data[d]);
                    const double z = (tau[d] - M.data[d]) / s;
                    if (t.requires_grad(mu)) t.grad(mu).data[d] += go * z / s;
                    if (t.requires_grad(log_std)) t.grad(log_std).data[d] += go * (z * z - 1.0);
                  }
                });
}

inline int stack_scalars(Tape& t, const std::vector<int>& scalars) {
  Tensor out(1, static_cast<int>(scalars.size()));
  for (size_t i = 0; i < scalars.size(); ++i) out.data[i] = t.scalar(scalars[i]);
  return t.push(std::move(out), scalars, [scalars](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    for (size_t i = 0; i < scalars.size(); ++i) {
      if (t.requires_grad(scalars[i])) t.grad(scalars[i]).data[0] += g.data[i];
    }
  });
}

// Weighted sum of scalar vars.
inline int weighted_sum(Tape& t, std::vector<int> terms, std::vector<double> coeffs) {
  double v = 0.0;
  for (size_t i = 0; i < terms.size(); ++i) v += coeffs[i] * t.scalar(terms[i]);
  Tensor out(1, 1);
  out.data[0] = v;
  // copy before the call: `terms` is both the parent list and a capture, and
  // argument evaluation order would otherwise be free to run the move first
  const std::vector<int> parents = terms;
  return t.push(std::move(out), parents,
                [terms = std::move(terms), coeffs = std::move(coeffs)](Tape& t, int self) {
                  const double go = t.grad(self).data[0];
                  for (size_t i = 0; i < terms.size(); ++i) {
                    if (t.requires_grad(terms[i])) t.grad(terms[i]).data[0] += go * coeffs[i];
                  }
                });
}

// Clipped GRPO surrogate with a sampled KL penalty:
//   L = -(1/G) sum_i min(r_i A_i, clamp(r_i, 1-eps, 1+eps) A_i)
//       + (beta/G) sum_i (new_i - ref_i),   r_i = exp(new_i - old_i).
// Ties between the branches keep the unclipped derivative.
inline int grpo_surrogate(Tape& t, int new_lp, std::vector<double> old_lp,
                          std::vector<double> ref_lp, std::vector<double> adv, double eps,
                          double beta) {
  const Tensor& N = t.val(new_lp);
  const int G = static_cast<int>(old_lp.size());
  if (N.size() != static_cast<size_t>(G)) throw std::invalid_argument("surrogate: size");
  double loss = 0.0;
  for (int i = 0; i < G; ++i) {
    if (!std::isfinite(N.data[i]) || !std::isfinite(old_lp[i]) || !std::isfinite(ref_lp[i]) ||
        !std::isfinite(adv[i]))
      throw std::invalid_argument("surrogate: non-finite input");
    const double r = std::exp(N.data[i] - old_lp[i]);
    const double clipped = std::clamp(r, 1.0 - eps, 1.0 + eps);
    loss += -std::min(r * adv[i], clipped * adv[i]) / G;
    loss += beta * (N.data[i] - ref_lp[i]) / G;
  }
  Tensor out(1, 1);
  out.data[0] = loss;
  return t.push(std::move(out), {new_lp},
                [new_lp, old_lp = std::move(old_lp), adv = std::move(adv), eps, beta](
                    Tape& t, int self) {
                  const double go = t.grad(self).data[0];
                  const Tensor& N = t.val(new_lp);
                  Tensor& g = t.grad(new_lp);
                  const int G = static_cast<int>(old_lp.size());
                  for (int i = 0; i < G; ++i) {
                    const double r = std::exp(N.data[i] - old_lp[i]);
                    const double clipped = std::clamp(r, 1.0 - eps, 1.0 + eps);
                    double d = 0.0;
                    if (r * adv[i] <= clipped * adv[i]) d = -r * adv[i] / G;  // unclipped branch
                    g.data[i] += go * (d + beta / G);
                  }
                });
}

}  // namespace ad
}  // namespace microdrive
