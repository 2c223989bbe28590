#pragma once

#include <numeric>
#include <utility>
#include <vector>

#include "fusedet/core/nn.hpp"

namespace fusedet::radar {

// Continuous kernels represented by self-moving points: each point carries a
// trainable position p_i in [-1,1]^d, a feature vector w_i and a radius r_i.
// The kernel value at x averages (1 - |x - p_i|_1 / r_i) * w_i over the
// neighbor set N(x) = { i : |x - p_i|_1 < r_i }, and is zero when N(x) is
// empty (continuous limit of vanishing support).

template <class T>
struct SMPParamsView {
  const Tensor<T>* points;   // [P, d]
  const Tensor<T>* weights;  // [P, F]
  const Tensor<T>* radii;    // [P]
};

// Pointwise kernel evaluation; the reference semantics of the kernel and the
// oracle for grid sampling.
template <class T>
std::vector<T> smp_kernel_eval(const T* x, int64_t d, const SMPParamsView<T>& prm) {
  const int64_t P = prm.points->dim(0), F = prm.weights->dim(1);
  std::vector<T> out(static_cast<size_t>(F), T(0));
  int64_t n = 0;
  for (int64_t i = 0; i < P; ++i) {
    T dist = 0;
    for (int64_t t = 0; t < d; ++t) dist += std::abs(x[t] - prm.points->at2(i, t));
    const T r = (*prm.radii)[i];
    if (dist < r) {
      const T coef = T(1) - dist / r;
      const T* wi = prm.weights->ptr() + i * F;
      for (int64_t f = 0; f < F; ++f) out[static_cast<size_t>(f)] += coef * wi[f];
      ++n;
    }
  }
  if (n > 0)
    for (auto& v : out) v /= static_cast<T>(n);
  return out;
}

// k x k lattice over [-1,1]^2; k = 1 degenerates to the single sample x = 0.
template <class T>
Tensor<T> kernel_lattice(int64_t k) {
  Tensor<T> coords({k, k, 2});
  for (int64_t a = 0; a < k; ++a)
    for (int64_t b = 0; b < k; ++b) {
      const T y = k == 1 ? T(0) : T(-1) + T(2) * static_cast<T>(a) / static_cast<T>(k - 1);
      const T x = k == 1 ? T(0) : T(-1) + T(2) * static_cast<T>(b) / static_cast<T>(k - 1);
      coords.at3(a, b, 0) = x;
      coords.at3(a, b, 1) = y;
    }
  return coords;
}

template <class T>
struct KernelGrid {
  Tensor<T> coords;  // [k, k, 2]
  Tensor<T> values;  // [out, in_per_group, k, k]
};

// Differentiable lattice sampling of the point kernel. Output layout matches
// a conv weight tensor [out, in_per_group, k, k] with F = out * in_per_group.
// Membership of N(x) is treated as locally constant, which is exact away
// from ball boundaries.
template <class T>
Var<T> smp_sample_grid(const Var<T>& points, const Var<T>& weights, const Var<T>& radii,
                       int64_t k, int64_t out_ch, int64_t in_per_group) {
  const int64_t P = points.dim(0), d = points.dim(1), F = weights.dim(1);
  check_shape(d == 2, "smp_sample_grid expects 2D kernel space");
  check_shape(F == out_ch * in_per_group, "smp weights width vs channel layout");
  const Tensor<T> coords = kernel_lattice<T>(k);

  Tensor<T> vals({out_ch, in_per_group, k, k});
  // Per-site neighbor lists (index, L1 distance) saved for the backward pass.
  auto neigh = std::make_shared<std::vector<std::vector<std::pair<int32_t, T>>>>(k * k);
  for (int64_t a = 0; a < k; ++a)
    for (int64_t b = 0; b < k; ++b) {
      auto& lst = (*neigh)[a * k + b];
      for (int64_t i = 0; i < P; ++i) {
        const T dist = std::abs(coords.at3(a, b, 0) - points.val().at2(i, 0)) +
                       std::abs(coords.at3(a, b, 1) - points.val().at2(i, 1));
        if (dist < radii.val()[i]) lst.emplace_back(static_cast<int32_t>(i), dist);
      }
      if (lst.empty()) continue;
      const T inv_n = T(1) / static_cast<T>(lst.size());
      for (const auto& [i, dist] : lst) {
        const T coef = (T(1) - dist / radii.val()[i]) * inv_n;
        const T* wi = weights.val().ptr() + i * F;
        for (int64_t f = 0; f < F; ++f) {
          const int64_t o = f / in_per_group, ci = f % in_per_group;
          vals.at4(o, ci, a, b) += coef * wi[f];
        }
      }
    }

  return make_op<T>(std::move(vals), {points, weights, radii},
                    [neigh, coords, k, F, in_per_group](Node<T>& o) {
                      auto& pp = o.parents[0];
                      auto& pw = o.parents[1];
                      auto& pr = o.parents[2];
                      for (int64_t a = 0; a < k; ++a)
                        for (int64_t b = 0; b < k; ++b) {
                          const auto& lst = (*neigh)[a * k + b];
                          if (lst.empty()) continue;
                          const T inv_n = T(1) / static_cast<T>(lst.size());
                          for (const auto& [i, dist] : lst) {
                            const T r = pr->val[i];
                            const T coef = (T(1) - dist / r) * inv_n;
                            const T* wi = pw->val.ptr() + i * F;
                            T wdot = 0;
                            for (int64_t f = 0; f < F; ++f) {
                              const int64_t oc = f / in_per_group, ci = f % in_per_group;
                              const T g = o.grad.at4(oc, ci, a, b);
                              if (pw->needs_grad) pw->grad[i * F + f] += coef * g;
                              wdot += wi[f] * g;
                            }
                            if (pr->needs_grad) pr->grad[i] += wdot * inv_n * dist / (r * r);
                            if (pp->needs_grad) {
                              for (int64_t t = 0; t < 2; ++t) {
                                const T diff = coords.at3(a, b, t) - pp->val.at2(i, t);
                                const T sgn = diff > 0 ? T(1) : (diff < 0 ? T(-1) : T(0));
                                pp->grad[i * 2 + t] += wdot * inv_n * sgn / r;
                              }
                            }
                          }
                        }
                    });
}

// Spec-shaped grid sampling on plain tensors (no autograd).
template <class T>
KernelGrid<T> sample_kernel_grid(const SMPParamsView<T>& prm, int64_t k, int64_t out_ch,
                                 int64_t in_per_group) {
  Var<T> p = Var<T>::constant(*prm.points);
  Var<T> w = Var<T>::constant(*prm.weights);
  Var<T> r = Var<T>::constant(*prm.radii);
  KernelGrid<T> grid;
  grid.coords = kernel_lattice<T>(k);
  grid.values = smp_sample_grid(p, w, r, k, out_ch, in_per_group).val();
  return grid;
}

// Convolution whose kernel is sampled from the moving-point representation.
// Depthwise by default (groups = channels) to keep the parameter count small.
template <class T>
struct SMPConv {
  Var<T> points, weights, radii, bias;
  int64_t cin = 0, cout = 0, k = 3, stride = 1, groups = 1, num_points = 0;
  T r_min = static_cast<T>(1e-2);

  SMPConv() = default;
  SMPConv(ParamStore<T>& ps, const std::string& name, int64_t cin_, int64_t cout_,
          int64_t num_points_ = 9, int64_t k_ = 3, int64_t stride_ = 1, int64_t groups_ = -1)
      : cin(cin_), cout(cout_), k(k_), stride(stride_),
        groups(groups_ < 0 ? cin_ : groups_), num_points(num_points_) {
    check_config(cin % groups == 0 && cout % groups == 0, "smpconv channel/group mismatch");
    const int64_t F = cout * (cin / groups);  // per-point feature length, in*out/groups
    Rng rp = ps.init_rng(name + ".points");
    Tensor<T> p({num_points, 2});
    for (auto& v : p.data) v = static_cast<T>(rp.uniform(-1, 1));
    points = ps.add(name + ".points", std::move(p), false);
    Rng rw = ps.init_rng(name + ".wfeat");
    const double wstd = 1.0 / std::sqrt(static_cast<double>(num_points));
    Tensor<T> w({num_points, F});
    for (auto& v : w.data) v = static_cast<T>(rw.normal(0.0, wstd));
    weights = ps.add(name + ".wfeat", std::move(w), false);
    radii = ps.add(name + ".radii",
                   Tensor<T>::full({num_points}, static_cast<T>(2.0 / std::sqrt(static_cast<double>(num_points)))),
                   false);
    bias = ps.add(name + ".bias", Tensor<T>({cout}), false);
  }

  Var<T> sampled_kernel() const {
    const int64_t in_per_group = cin / groups;
    // F spans the grouped conv weight layout [cout, cin/groups].
    return smp_sample_grid(points, weights, radii, k, cout, in_per_group);
  }

  Var<T> forward(const Var<T>& x) const {
    check_shape(x.dim(1) == cin, "smpconv input channels");
    return ops::conv2d(x, sampled_kernel(), bias, stride, k / 2, PadMode::Zero, groups);
  }

  // Invariant r_i >= r_min, restored after every optimizer step.
  void clamp_radii() {
    for (int64_t i = 0; i < radii.numel(); ++i)
      if (radii.val()[i] < r_min) radii.val()[i] = r_min;
  }
};

// Residual block: act(proj(x) + GN(SMPConv(act(GN(SMPConv(x)))))).
template <class T>
struct SMPBlock {
  SMPConv<T> conv1, conv2;
  nn::GroupNorm<T> gn1, gn2;
  nn::Conv2d<T> proj;  // 1x1, only when widths differ
  bool has_proj = false;

  SMPBlock() = default;
  SMPBlock(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout,
           int64_t num_points = 9)
      : conv1(ps, name + ".c1", cin, cout, num_points),
        conv2(ps, name + ".c2", cout, cout, num_points),
        gn1(ps, name + ".n1", cout),
        gn2(ps, name + ".n2", cout) {
    // depthwise SMP needs cin == cout in conv1; widen via proj when not
    if (cin != cout) {
      conv1 = SMPConv<T>(ps, name + ".c1w", cin, cout, num_points, 3, 1, std::gcd(cin, cout));
      proj = nn::Conv2d<T>(ps, name + ".proj", cin, cout, 1);
      has_proj = true;
    }
  }

  Var<T> forward(const Var<T>& x) const {
    Var<T> h = ops::silu(gn1.forward(conv1.forward(x)));
    h = gn2.forward(conv2.forward(h));
    Var<T> res = has_proj ? proj.forward(x) : x;
    return ops::silu(ops::add(res, h));
  }

  void clamp_radii() {
    conv1.clamp_radii();
    conv2.clamp_radii();
  }
};

}  // namespace fusedet::radar
