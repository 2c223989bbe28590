#pragma once

#include <vector>

#include "fusedet/core/ops.hpp"

namespace fusedet::vision {

// Fixed 3x3 Sobel operators (correlation convention, reflect padding).
// Kx responds to horizontal gradients, Ky = Kx^T to vertical ones; the sign
// convention is irrelevant once magnitudes are taken.

template <class T>
Var<T> sobel_kernel_x() {
  Tensor<T> k({1, 1, 3, 3});
  const T v[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
  for (int i = 0; i < 9; ++i) k[i] = v[i];
  return Var<T>::constant(std::move(k));
}

template <class T>
Var<T> sobel_kernel_y() {
  Tensor<T> k({1, 1, 3, 3});
  const T v[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
  for (int i = 0; i < 9; ++i) k[i] = v[i];
  return Var<T>::constant(std::move(k));
}

// Mean over channels: [B,C,H,W] -> [B,1,H,W].
template <class T>
Var<T> channel_mean(const Var<T>& x) {
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> v({B, 1, x.dim(2), x.dim(3)});
  for (int64_t b = 0; b < B; ++b) {
    T* vr = v.ptr() + b * HW;
    for (int64_t c = 0; c < C; ++c) {
      const T* xr = x.val().ptr() + (b * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) vr[i] += xr[i];
    }
    for (int64_t i = 0; i < HW; ++i) vr[i] /= static_cast<T>(C);
  }
  return make_op<T>(std::move(v), {x}, [B, C, HW](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    for (int64_t b = 0; b < B; ++b) {
      const T* gr = o.grad.ptr() + b * HW;
      for (int64_t c = 0; c < C; ++c) {
        T* dxr = p->grad.ptr() + (b * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) dxr[i] += gr[i] / static_cast<T>(C);
      }
    }
  });
}

// Horizontal/vertical gradients of a map. Multi-channel inputs are reduced
// to their channel mean first. Requires spatial size >= 3x3.
template <class T>
std::pair<Var<T>, Var<T>> sobel_gradients(const Var<T>& x) {
  check_shape(x.dim(2) >= 3 && x.dim(3) >= 3, "sobel_gradients: input smaller than 3x3");
  Var<T> g = x.dim(1) == 1 ? x : channel_mean(x);
  Var<T> none;
  Var<T> gx = ops::conv2d(g, sobel_kernel_x<T>(), none, 1, 1, PadMode::Reflect);
  Var<T> gy = ops::conv2d(g, sobel_kernel_y<T>(), none, 1, 1, PadMode::Reflect);
  return {gx, gy};
}

// G = sqrt(Gx^2 + Gy^2 + eps); eps floors the gradient for stability.
template <class T>
Var<T> edge_magnitude(const Var<T>& gx, const Var<T>& gy, T eps = static_cast<T>(1e-12)) {
  check_shape(gx.shape() == gy.shape(), "edge_magnitude shapes");
  return ops::sqrt_op(ops::add(ops::mul(gx, gx), ops::mul(gy, gy)), eps);
}

// Multi-scale edge maps G^(0..L): repeated 2x2 stride-2 max pooling (never
// averaging), ceil semantics so level l has size ceil(size(l-1)/2).
template <class T>
struct EdgePyramid {
  std::vector<Var<T>> levels;  // G^(0) .. G^(L)
  int64_t source_scale = 4;    // stride of G^(0) w.r.t. the input image
};

template <class T>
EdgePyramid<T> edge_pyramid(const Var<T>& g, int64_t L, int64_t source_scale = 4) {
  check_config(L >= 1, "edge_pyramid: L must be >= 1");
  EdgePyramid<T> pyr;
  pyr.source_scale = source_scale;
  pyr.levels.push_back(g);
  for (int64_t l = 1; l <= L; ++l)
    pyr.levels.push_back(ops::maxpool2d(pyr.levels.back(), 2, 2, /*ceil=*/true));
  return pyr;
}

}  // namespace fusedet::vision
