#pragma once

#include <cmath>
#include <map>
#include <string>

#include "fusedet/core/nn.hpp"

namespace fusedet {

// AdamW with decoupled weight decay. Iteration order over the (ordered)
// parameter map is fixed, so steps are deterministic.
template <class T>
struct AdamW {
  struct Slot {
    Tensor<T> m, v;
  };

  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  int64_t t = 0;
  std::map<std::string, Slot> slots;

  // Global gradient-norm clip; returns the pre-clip norm.
  double clip_global_norm(ParamStore<T>& ps, double max_norm) {
    double sq = 0;
    for (auto& [name, e] : ps.entries) {
      if (!e.var.node_->grad_ready) continue;
      const auto& g = e.var.node_->grad;
      for (int64_t i = 0; i < g.numel(); ++i) sq += static_cast<double>(g[i]) * g[i];
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
      const T s = static_cast<T>(max_norm / norm);
      for (auto& [name, e] : ps.entries) {
        if (!e.var.node_->grad_ready) continue;
        auto& g = e.var.node_->grad;
        for (int64_t i = 0; i < g.numel(); ++i) g[i] *= s;
      }
    }
    return norm;
  }

  void step(ParamStore<T>& ps) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& [name, e] : ps.entries) {
      auto& node = *e.var.node_;
      if (!node.grad_ready) continue;
      auto& slot = slots[name];
      if (slot.m.numel() != node.val.numel()) {
        slot.m = Tensor<T>(node.val.shape);
        slot.v = Tensor<T>(node.val.shape);
      }
      const double wd = e.decay ? weight_decay : 0.0;
      for (int64_t i = 0; i < node.val.numel(); ++i) {
        const double g = node.grad[i];
        slot.m[i] = static_cast<T>(beta1 * slot.m[i] + (1 - beta1) * g);
        slot.v[i] = static_cast<T>(beta2 * slot.v[i] + (1 - beta2) * g * g);
        const double mh = slot.m[i] / bc1;
        const double vh = slot.v[i] / bc2;
        node.val[i] = static_cast<T>(node.val[i] - lr * (mh / (std::sqrt(vh) + eps) + wd * node.val[i]));
      }
    }
  }
};

}  // namespace fusedet
