#pragma once

// Optimizers over named parameter arrays. Stage 1 uses AdamW, stage 2 plain
// gradient descent.

#include <cmath>
#include <map>
#include <string>

#include "microdrive/model.hpp"

namespace microdrive {

struct AdamW {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int64_t t = 0;
  std::map<std::string, Tensor> m, v;

  void step(ModelParams& params, const std::map<std::string, Tensor>& grads) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& [name, p] : params.arrays) {
      const auto it = grads.find(name);
      if (it == grads.end()) continue;
      const Tensor& g = it->second;
      Tensor& mm = m.try_emplace(name, Tensor(p.rows, p.cols)).first->second;
      Tensor& vv = v.try_emplace(name, Tensor(p.rows, p.cols)).first->second;
      for (size_t i = 0; i < p.size(); ++i) {
        mm.data[i] = beta1 * mm.data[i] + (1.0 - beta1) * g.data[i];
        vv.data[i] = beta2 * vv.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
        const double mhat = mm.data[i] / bc1;
        const double vhat = vv.data[i] / bc2;
        p.data[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.data[i]);
      }
    }
  }
};

struct Sgd {
  double lr = 3e-4;

  void step(ModelParams& params, const std::map<std::string, Tensor>& grads) const {
    for (auto& [name, p] : params.arrays) {
      const auto it = grads.find(name);
      if (it == grads.end()) continue;
      const Tensor& g = it->second;
      for (size_t i = 0; i < p.size(); ++i) p.data[i] -= lr * g.data[i];
    }
  }
};

}  // namespace microdrive
