#pragma once

// Finite-difference gradient checking against the autograd path. Test-only.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fusedet/core/autograd.hpp"

namespace fusedet::testing {

struct GradCheckResult {
  double max_rel_err = 0;
  int64_t checked = 0;
  std::string worst;
};

// Central finite differences on every element of every listed leaf (or a
// strided subset when `max_per_param` > 0). `make_loss` must rebuild the
// graph from the leaves' current values and return a scalar Var.
inline GradCheckResult check_gradients(const std::function<Var<double>()>& make_loss,
                                       std::vector<std::pair<std::string, Var<double>>> leaves,
                                       double h = 1e-4, int64_t max_per_param = 0) {
  for (auto& [name, v] : leaves) v.zero_grad();
  Var<double> loss = make_loss();
  backward(loss);

  GradCheckResult res;
  for (auto& [name, v] : leaves) {
    Tensor<double> analytic = v.node_->grad_ready ? v.node_->grad : Tensor<double>(v.shape());
    const int64_t n = v.numel();
    const int64_t stride = (max_per_param > 0 && n > max_per_param) ? n / max_per_param : 1;
    for (int64_t i = 0; i < n; i += stride) {
      const double orig = v.val()[i];
      v.val()[i] = orig + h;
      const double fp = make_loss().val()[0];
      v.val()[i] = orig - h;
      const double fm = make_loss().val()[0];
      v.val()[i] = orig;
      const double fd = (fp - fm) / (2 * h);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(fd), 1e-6});
      const double rel = std::abs(a - fd) / denom;
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(a) +
                    " fd=" + std::to_string(fd);
      }
    }
  }
  return res;
}

}  // namespace fusedet::testing
