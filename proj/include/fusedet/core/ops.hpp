#pragma once

#include <cmath>
#include <vector>

#include "fusedet/core/autograd.hpp"
#include "fusedet/core/kernels.hpp"

namespace fusedet::ops {

// ---------------------------------------------------------------- elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_shape(a.shape() == b.shape(), "add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> v(a.shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = a.val()[i] + b.val()[i];
  return make_op<T>(std::move(v), {a, b}, [](Node<T>& o) {
    for (int pi = 0; pi < 2; ++pi) {
      auto& p = o.parents[pi];
      if (!p->needs_grad) continue;
      for (int64_t i = 0; i < o.grad.numel(); ++i) p->grad[i] += o.grad[i];
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_shape(a.shape() == b.shape(), "sub shapes");
  Tensor<T> v(a.shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = a.val()[i] - b.val()[i];
  return make_op<T>(std::move(v), {a, b}, [](Node<T>& o) {
    if (o.parents[0]->needs_grad)
      for (int64_t i = 0; i < o.grad.numel(); ++i) o.parents[0]->grad[i] += o.grad[i];
    if (o.parents[1]->needs_grad)
      for (int64_t i = 0; i < o.grad.numel(); ++i) o.parents[1]->grad[i] -= o.grad[i];
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_shape(a.shape() == b.shape(), "mul shapes");
  Tensor<T> v(a.shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = a.val()[i] * b.val()[i];
  return make_op<T>(std::move(v), {a, b}, [](Node<T>& o) {
    auto& pa = o.parents[0];
    auto& pb = o.parents[1];
    if (pa->needs_grad)
      for (int64_t i = 0; i < o.grad.numel(); ++i) pa->grad[i] += o.grad[i] * pb->val[i];
    if (pb->needs_grad)
      for (int64_t i = 0; i < o.grad.numel(); ++i) pb->grad[i] += o.grad[i] * pa->val[i];
  });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  check_shape(a.shape() == b.shape(), "div shapes");
  Tensor<T> v(a.shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = a.val()[i] / b.val()[i];
  return make_op<T>(std::move(v), {a, b}, [](Node<T>& o) {
    auto& pa = o.parents[0];
    auto& pb = o.parents[1];
    for (int64_t i = 0; i < o.grad.numel(); ++i) {
      const T bi = pb->val[i];
      if (pa->needs_grad) pa->grad[i] += o.grad[i] / bi;
      if (pb->needs_grad) pb->grad[i] -= o.grad[i] * pa->val[i] / (bi * bi);
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> v(a.shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = a.val()[i] * s;
  return make_op<T>(std::move(v), {a}, [s](Node<T>& o) {
    if (o.parents[0]->needs_grad)
      for (int64_t i = 0; i < o.grad.numel(); ++i) o.parents[0]->grad[i] += o.grad[i] * s;
  });
}

template <class T>
Var<T> add_const(const Var<T>& a, T c) {
  Tensor<T> v(a.shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = a.val()[i] + c;
  return make_op<T>(std::move(v), {a}, [](Node<T>& o) {
    if (o.parents[0]->needs_grad)
      for (int64_t i = 0; i < o.grad.numel(); ++i) o.parents[0]->grad[i] += o.grad[i];
  });
}

template <class T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

template <class T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> v(a.shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = a.val()[i] > T(0) ? a.val()[i] : T(0);
  return make_op<T>(std::move(v), {a}, [](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    for (int64_t i = 0; i < o.grad.numel(); ++i)
      if (p->val[i] > T(0)) p->grad[i] += o.grad[i];
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> v(a.shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = T(1) / (T(1) + std::exp(-a.val()[i]));
  return make_op<T>(std::move(v), {a}, [](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    for (int64_t i = 0; i < o.grad.numel(); ++i) {
      const T y = o.val[i];
      p->grad[i] += o.grad[i] * y * (T(1) - y);
    }
  });
}

// x * sigmoid(x); smooth activation keeps finite-difference checks clean.
template <class T>
Var<T> silu(const Var<T>& a) {
  Tensor<T> v(a.shape());
  for (int64_t i = 0; i < v.numel(); ++i) {
    const T x = a.val()[i];
    v[i] = x / (T(1) + std::exp(-x));
  }
  return make_op<T>(std::move(v), {a}, [](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    for (int64_t i = 0; i < o.grad.numel(); ++i) {
      const T x = p->val[i];
      const T s = T(1) / (T(1) + std::exp(-x));
      p->grad[i] += o.grad[i] * (s + x * s * (T(1) - s));
    }
  });
}

template <class T>
Var<T> abs_op(const Var<T>& a) {
  Tensor<T> v(a.shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = std::abs(a.val()[i]);
  return make_op<T>(std::move(v), {a}, [](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    for (int64_t i = 0; i < o.grad.numel(); ++i)
      p->grad[i] += o.grad[i] * (p->val[i] >= T(0) ? T(1) : T(-1));
  });
}

template <class T>
Var<T> sqrt_op(const Var<T>& a, T eps = T(0)) {
  Tensor<T> v(a.shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = std::sqrt(a.val()[i] + eps);
  return make_op<T>(std::move(v), {a}, [](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    for (int64_t i = 0; i < o.grad.numel(); ++i) p->grad[i] += o.grad[i] / (T(2) * o.val[i]);
  });
}

// Gradient routes to the winning side; ties go to `a`.
template <class T>
Var<T> emax(const Var<T>& a, const Var<T>& b) {
  check_shape(a.shape() == b.shape(), "emax shapes");
  Tensor<T> v(a.shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = std::max(a.val()[i], b.val()[i]);
  return make_op<T>(std::move(v), {a, b}, [](Node<T>& o) {
    auto& pa = o.parents[0];
    auto& pb = o.parents[1];
    for (int64_t i = 0; i < o.grad.numel(); ++i) {
      if (pa->val[i] >= pb->val[i]) {
        if (pa->needs_grad) pa->grad[i] += o.grad[i];
      } else if (pb->needs_grad) {
        pb->grad[i] += o.grad[i];
      }
    }
  });
}

template <class T>
Var<T> emin(const Var<T>& a, const Var<T>& b) {
  check_shape(a.shape() == b.shape(), "emin shapes");
  Tensor<T> v(a.shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = std::min(a.val()[i], b.val()[i]);
  return make_op<T>(std::move(v), {a, b}, [](Node<T>& o) {
    auto& pa = o.parents[0];
    auto& pb = o.parents[1];
    for (int64_t i = 0; i < o.grad.numel(); ++i) {
      if (pa->val[i] <= pb->val[i]) {
        if (pa->needs_grad) pa->grad[i] += o.grad[i];
      } else if (pb->needs_grad) {
        pb->grad[i] += o.grad[i];
      }
    }
  });
}

template <class T>
Var<T> clamp_min(const Var<T>& a, T lo) {
  Tensor<T> v(a.shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = std::max(a.val()[i], lo);
  return make_op<T>(std::move(v), {a}, [lo](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    for (int64_t i = 0; i < o.grad.numel(); ++i)
      if (p->val[i] > lo) p->grad[i] += o.grad[i];
  });
}

template <class T>
Var<T> detach(const Var<T>& a) {
  return Var<T>::constant(a.val());
}

// Inverse sigmoid with clamped domain; gradient vanishes in the clamped
// region (inputs there are already saturated).
template <class T>
Var<T> logit(const Var<T>& a, T eps = static_cast<T>(1e-6)) {
  Tensor<T> v(a.shape());
  for (int64_t i = 0; i < v.numel(); ++i) {
    const T p = std::clamp(a.val()[i], eps, T(1) - eps);
    v[i] = std::log(p / (T(1) - p));
  }
  return make_op<T>(std::move(v), {a}, [eps](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    for (int64_t i = 0; i < o.grad.numel(); ++i) {
      const T x = p->val[i];
      if (x > eps && x < T(1) - eps) p->grad[i] += o.grad[i] / (x * (T(1) - x));
    }
  });
}

// Sine-cosine embedding of normalized 2D positions [L,2] -> [L,dim]
// (dim/2 channels per axis, interleaved sin/cos, temperature 10000).
template <class T>
Var<T> sincos2d(const Var<T>& pos, int64_t dim) {
  const int64_t L = pos.dim(0), half = dim / 2;
  check_shape(pos.dim(1) == 2 && dim % 4 == 0, "sincos2d: [L,2] input, dim % 4 == 0");
  const double two_pi = 2.0 * M_PI;
  Tensor<T> v({L, dim});
  for (int64_t l = 0; l < L; ++l)
    for (int axis = 0; axis < 2; ++axis) {
      const double p = static_cast<double>(pos.val().at2(l, axis)) * two_pi;
      for (int64_t i = 0; i < half / 2; ++i) {
        const double f = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(half));
        v.at2(l, axis * half + 2 * i) = static_cast<T>(std::sin(p * f));
        v.at2(l, axis * half + 2 * i + 1) = static_cast<T>(std::cos(p * f));
      }
    }
  return make_op<T>(std::move(v), {pos}, [L, half](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    const double two_pi = 2.0 * M_PI;
    for (int64_t l = 0; l < L; ++l)
      for (int axis = 0; axis < 2; ++axis) {
        double acc = 0;
        for (int64_t i = 0; i < half / 2; ++i) {
          const double f =
              std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(half));
          const double s = o.val.at2(l, axis * half + 2 * i);
          const double c = o.val.at2(l, axis * half + 2 * i + 1);
          acc += two_pi * f *
                 (c * static_cast<double>(o.grad.at2(l, axis * half + 2 * i)) -
                  s * static_cast<double>(o.grad.at2(l, axis * half + 2 * i + 1)));
        }
        p->grad.at2(l, axis) += static_cast<T>(acc);
      }
  });
}

// ---------------------------------------------------------------- broadcast

// x[B,C,H,W] * g[B,C,1,1]
template <class T>
Var<T> mul_channel(const Var<T>& x, const Var<T>& g) {
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  check_shape(g.dim(0) == B && g.dim(1) == C, "mul_channel gate shape");
  Tensor<T> v(x.shape());
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T gv = g.val()[bc];
    const T* xr = x.val().ptr() + bc * HW;
    T* vr = v.ptr() + bc * HW;
    for (int64_t i = 0; i < HW; ++i) vr[i] = xr[i] * gv;
  }
  return make_op<T>(std::move(v), {x, g}, [B, C, HW](Node<T>& o) {
    auto& px = o.parents[0];
    auto& pg = o.parents[1];
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const T* gr = o.grad.ptr() + bc * HW;
      if (px->needs_grad) {
        const T gv = pg->val[bc];
        T* dxr = px->grad.ptr() + bc * HW;
        for (int64_t i = 0; i < HW; ++i) dxr[i] += gr[i] * gv;
      }
      if (pg->needs_grad) {
        const T* xr = px->val.ptr() + bc * HW;
        T s = 0;
        for (int64_t i = 0; i < HW; ++i) s += gr[i] * xr[i];
        pg->grad[bc] += s;
      }
    }
  });
}

// x[B,C,H,W] * m[B,1,H,W]
template <class T>
Var<T> mul_spatial(const Var<T>& x, const Var<T>& m) {
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  check_shape(m.dim(0) == B && m.dim(1) == 1 && m.dim(2) == x.dim(2) && m.dim(3) == x.dim(3),
              "mul_spatial mask shape");
  Tensor<T> v(x.shape());
  for (int64_t b = 0; b < B; ++b) {
    const T* mr = m.val().ptr() + b * HW;
    for (int64_t c = 0; c < C; ++c) {
      const T* xr = x.val().ptr() + (b * C + c) * HW;
      T* vr = v.ptr() + (b * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) vr[i] = xr[i] * mr[i];
    }
  }
  return make_op<T>(std::move(v), {x, m}, [B, C, HW](Node<T>& o) {
    auto& px = o.parents[0];
    auto& pm = o.parents[1];
    for (int64_t b = 0; b < B; ++b) {
      const T* mr = pm->val.ptr() + b * HW;
      for (int64_t c = 0; c < C; ++c) {
        const T* gr = o.grad.ptr() + (b * C + c) * HW;
        if (px->needs_grad) {
          T* dxr = px->grad.ptr() + (b * C + c) * HW;
          for (int64_t i = 0; i < HW; ++i) dxr[i] += gr[i] * mr[i];
        }
        if (pm->needs_grad) {
          const T* xr = px->val.ptr() + (b * C + c) * HW;
          T* dmr = pm->grad.ptr() + b * HW;
          for (int64_t i = 0; i < HW; ++i) dmr[i] += gr[i] * xr[i];
        }
      }
    }
  });
}

// ---------------------------------------------------------------- structure

template <class T>
Var<T> reshape(const Var<T>& x, Shape s) {
  check_shape(numel_of(s) == x.numel(), "reshape numel");
  Tensor<T> v(std::move(s));
  v.data = x.val().data;
  return make_op<T>(std::move(v), {x}, [](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    for (int64_t i = 0; i < o.grad.numel(); ++i) p->grad[i] += o.grad[i];
  });
}

// Concatenate along the channel dim of [B,C,H,W] tensors.
template <class T>
Var<T> concat_ch(const std::vector<Var<T>>& xs) {
  check(!xs.empty(), "concat_ch: empty");
  const int64_t B = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int64_t Ctot = 0;
  for (const auto& x : xs) {
    check_shape(x.dim(0) == B && x.dim(2) == H && x.dim(3) == W, "concat_ch shapes");
    Ctot += x.dim(1);
  }
  Tensor<T> v({B, Ctot, H, W});
  const int64_t HW = H * W;
  std::vector<int64_t> offs;
  int64_t off = 0;
  for (const auto& x : xs) {
    offs.push_back(off);
    const int64_t C = x.dim(1);
    for (int64_t b = 0; b < B; ++b)
      std::copy(x.val().ptr() + b * C * HW, x.val().ptr() + (b + 1) * C * HW,
                v.ptr() + (b * Ctot + off) * HW);
    off += C;
  }
  return make_op<T>(std::move(v), xs, [B, Ctot, HW, offs](Node<T>& o) {
    for (size_t pi = 0; pi < o.parents.size(); ++pi) {
      auto& p = o.parents[pi];
      if (!p->needs_grad) continue;
      const int64_t C = p->val.dim(1);
      for (int64_t b = 0; b < B; ++b) {
        const T* src = o.grad.ptr() + (b * Ctot + offs[pi]) * HW;
        T* dst = p->grad.ptr() + b * C * HW;
        for (int64_t i = 0; i < C * HW; ++i) dst[i] += src[i];
      }
    }
  });
}

template <class T>
Var<T> slice_ch(const Var<T>& x, int64_t c0, int64_t c1) {
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  check_shape(c0 >= 0 && c1 <= C && c0 < c1, "slice_ch range");
  Tensor<T> v({B, c1 - c0, x.dim(2), x.dim(3)});
  for (int64_t b = 0; b < B; ++b)
    std::copy(x.val().ptr() + (b * C + c0) * HW, x.val().ptr() + (b * C + c1) * HW,
              v.ptr() + b * (c1 - c0) * HW);
  return make_op<T>(std::move(v), {x}, [B, C, HW, c0, c1](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    const int64_t Cs = c1 - c0;
    for (int64_t b = 0; b < B; ++b) {
      const T* src = o.grad.ptr() + b * Cs * HW;
      T* dst = p->grad.ptr() + (b * C + c0) * HW;
      for (int64_t i = 0; i < Cs * HW; ++i) dst[i] += src[i];
    }
  });
}

// Columns [c0, c1) of a 2D tensor.
template <class T>
Var<T> slice_cols(const Var<T>& x, int64_t c0, int64_t c1) {
  const int64_t M = x.dim(0), N = x.dim(1);
  check_shape(c0 >= 0 && c1 <= N && c0 < c1, "slice_cols range");
  Tensor<T> v({M, c1 - c0});
  for (int64_t m = 0; m < M; ++m)
    std::copy(x.val().ptr() + m * N + c0, x.val().ptr() + m * N + c1, v.ptr() + m * (c1 - c0));
  return make_op<T>(std::move(v), {x}, [M, N, c0, c1](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    const int64_t Cs = c1 - c0;
    for (int64_t m = 0; m < M; ++m)
      for (int64_t j = 0; j < Cs; ++j) p->grad[m * N + c0 + j] += o.grad[m * Cs + j];
  });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& xs) {
  check(!xs.empty(), "concat_cols: empty");
  const int64_t M = xs[0].dim(0);
  int64_t Ntot = 0;
  for (const auto& x : xs) {
    check_shape(x.dim(0) == M, "concat_cols rows");
    Ntot += x.dim(1);
  }
  Tensor<T> v({M, Ntot});
  int64_t off = 0;
  std::vector<int64_t> offs;
  for (const auto& x : xs) {
    offs.push_back(off);
    const int64_t N = x.dim(1);
    for (int64_t m = 0; m < M; ++m)
      std::copy(x.val().ptr() + m * N, x.val().ptr() + (m + 1) * N, v.ptr() + m * Ntot + off);
    off += N;
  }
  return make_op<T>(std::move(v), xs, [M, Ntot, offs](Node<T>& o) {
    for (size_t pi = 0; pi < o.parents.size(); ++pi) {
      auto& p = o.parents[pi];
      if (!p->needs_grad) continue;
      const int64_t N = p->val.dim(1);
      for (int64_t m = 0; m < M; ++m)
        for (int64_t j = 0; j < N; ++j) p->grad[m * N + j] += o.grad[m * Ntot + offs[pi] + j];
    }
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& xs) {
  check(!xs.empty(), "concat_rows: empty");
  const int64_t N = xs[0].dim(1);
  int64_t Mtot = 0;
  for (const auto& x : xs) {
    check_shape(x.dim(1) == N, "concat_rows cols");
    Mtot += x.dim(0);
  }
  Tensor<T> v({Mtot, N});
  int64_t off = 0;
  std::vector<int64_t> offs;
  for (const auto& x : xs) {
    offs.push_back(off);
    std::copy(x.val().ptr(), x.val().ptr() + x.numel(), v.ptr() + off * N);
    off += x.dim(0);
  }
  return make_op<T>(std::move(v), xs, [N, offs](Node<T>& o) {
    for (size_t pi = 0; pi < o.parents.size(); ++pi) {
      auto& p = o.parents[pi];
      if (!p->needs_grad) continue;
      const int64_t M = p->val.dim(0);
      const T* src = o.grad.ptr() + offs[pi] * N;
      for (int64_t i = 0; i < M * N; ++i) p->grad[i] += src[i];
    }
  });
}

// Row gather: out[i,:] = x[idx[i],:]. Backward scatter-adds.
template <class T>
Var<T> select_rows(const Var<T>& x, std::vector<int64_t> idx) {
  const int64_t N = x.dim(1);
  Tensor<T> v({static_cast<int64_t>(idx.size()), N});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(x.val().ptr() + idx[i] * N, x.val().ptr() + (idx[i] + 1) * N,
              v.ptr() + static_cast<int64_t>(i) * N);
  return make_op<T>(std::move(v), {x}, [idx, N](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    for (size_t i = 0; i < idx.size(); ++i)
      for (int64_t j = 0; j < N; ++j)
        p->grad[idx[i] * N + j] += o.grad[static_cast<int64_t>(i) * N + j];
  });
}

// [B,C,H,W] -> [B, H*W, C] token layout.
template <class T>
Var<T> flatten_tokens(const Var<T>& x) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> v({B, H * W, C});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const T* xr = x.val().ptr() + (b * C + c) * H * W;
      T* vr = v.ptr() + b * H * W * C;
      for (int64_t i = 0; i < H * W; ++i) vr[i * C + c] = xr[i];
    }
  return make_op<T>(std::move(v), {x}, [B, C, H, W](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c) {
        T* dxr = p->grad.ptr() + (b * C + c) * H * W;
        const T* gr = o.grad.ptr() + b * H * W * C;
        for (int64_t i = 0; i < H * W; ++i) dxr[i] += gr[i * C + c];
      }
  });
}

// Inverse of flatten_tokens.
template <class T>
Var<T> unflatten_tokens(const Var<T>& x, int64_t C, int64_t H, int64_t W) {
  const int64_t B = x.dim(0);
  check_shape(x.dim(1) == H * W && x.dim(2) == C, "unflatten_tokens shape");
  Tensor<T> v({B, C, H, W});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      T* vr = v.ptr() + (b * C + c) * H * W;
      const T* xr = x.val().ptr() + b * H * W * C;
      for (int64_t i = 0; i < H * W; ++i) vr[i] = xr[i * C + c];
    }
  return make_op<T>(std::move(v), {x}, [B, C, H, W](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c) {
        const T* gr = o.grad.ptr() + (b * C + c) * H * W;
        T* dxr = p->grad.ptr() + b * H * W * C;
        for (int64_t i = 0; i < H * W; ++i) dxr[i * C + c] += gr[i];
      }
  });
}

// Batch slice of [B, ...] -> [...] for per-sample decoding.
template <class T>
Var<T> select_batch(const Var<T>& x, int64_t b) {
  Shape s(x.shape().begin() + 1, x.shape().end());
  const int64_t n = numel_of(s);
  Tensor<T> v(s);
  std::copy(x.val().ptr() + b * n, x.val().ptr() + (b + 1) * n, v.ptr());
  return make_op<T>(std::move(v), {x}, [b, n](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    for (int64_t i = 0; i < n; ++i) p->grad[b * n + i] += o.grad[i];
  });
}

// --------------------------------------------------------------- linear alg

// 2D matmul; transB reads B as [N,K].
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transB = false) {
  const int64_t M = a.dim(0), K = a.dim(1);
  const int64_t N = transB ? b.dim(0) : b.dim(1);
  check_shape(transB ? b.dim(1) == K : b.dim(0) == K, "matmul inner dims");
  Tensor<T> v({M, N});
  gemm<T>(false, transB, M, N, K, T(1), a.val().ptr(), K, b.val().ptr(), b.dim(1), T(0), v.ptr(),
          N);
  return make_op<T>(std::move(v), {a, b}, [M, N, K, transB](Node<T>& o) {
    auto& pa = o.parents[0];
    auto& pb = o.parents[1];
    // dA = dC * op(B)^T ; dB = A^T * dC (or dC^T * A when transB)
    if (pa->needs_grad) {
      if (!transB)
        gemm<T>(false, true, M, K, N, T(1), o.grad.ptr(), N, pb->val.ptr(), N, T(1),
                pa->grad.ptr(), K);
      else
        gemm<T>(false, false, M, K, N, T(1), o.grad.ptr(), N, pb->val.ptr(), K, T(1),
                pa->grad.ptr(), K);
    }
    if (pb->needs_grad) {
      if (!transB)
        gemm<T>(true, false, K, N, M, T(1), pa->val.ptr(), K, o.grad.ptr(), N, T(1),
                pb->grad.ptr(), N);
      else
        gemm<T>(true, false, N, K, M, T(1), o.grad.ptr(), N, pa->val.ptr(), K, T(1),
                pb->grad.ptr(), K);
    }
  });
}

template <class T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& v) {
  const int64_t M = x.dim(0), N = x.dim(1);
  check_shape(v.numel() == N, "add_rowvec size");
  Tensor<T> out(x.shape());
  for (int64_t m = 0; m < M; ++m)
    for (int64_t n = 0; n < N; ++n) out[m * N + n] = x.val()[m * N + n] + v.val()[n];
  return make_op<T>(std::move(out), {x, v}, [M, N](Node<T>& o) {
    auto& px = o.parents[0];
    auto& pv = o.parents[1];
    if (px->needs_grad)
      for (int64_t i = 0; i < M * N; ++i) px->grad[i] += o.grad[i];
    if (pv->needs_grad)
      for (int64_t m = 0; m < M; ++m)
        for (int64_t n = 0; n < N; ++n) pv->grad[n] += o.grad[m * N + n];
  });
}

// ------------------------------------------------------------------- nn ops

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int64_t stride, int64_t pad,
              PadMode mode = PadMode::Zero, int64_t groups = 1) {
  Tensor<T> y = conv2d_fwd(x.val(), w.val(), bias.defined() ? bias.val().ptr() : nullptr, stride,
                           pad, mode, groups);
  std::vector<Var<T>> parents = {x, w};
  if (bias.defined()) parents.push_back(bias);
  return make_op<T>(std::move(y), parents, [stride, pad, mode, groups](Node<T>& o) {
    auto& px = o.parents[0];
    auto& pw = o.parents[1];
    Node<T>* pb = o.parents.size() > 2 ? o.parents[2].get() : nullptr;
    conv2d_bwd(px->val, pw->val, o.grad, stride, pad, mode, groups,
               px->needs_grad ? &px->grad : nullptr, pw->needs_grad ? &pw->grad : nullptr,
               (pb && pb->needs_grad) ? &pb->grad : nullptr);
  });
}

template <class T>
Var<T> maxpool2d(const Var<T>& x, int64_t k, int64_t stride, bool ceil_mode = false) {
  Tensor<int32_t> argmax;
  Tensor<T> y = maxpool2d_fwd(x.val(), k, stride, ceil_mode, &argmax);
  const int64_t H = x.dim(2), W = x.dim(3);
  return make_op<T>(std::move(y), {x}, [argmax = std::move(argmax), H, W](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    maxpool2d_bwd(argmax, o.grad, H, W, &p->grad);
  });
}

template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> v({B, C, 1, 1});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* xr = x.val().ptr() + bc * HW;
    T s = 0;
    for (int64_t i = 0; i < HW; ++i) s += xr[i];
    v[bc] = s / static_cast<T>(HW);
  }
  return make_op<T>(std::move(v), {x}, [B, C, HW](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const T g = o.grad[bc] / static_cast<T>(HW);
      T* dxr = p->grad.ptr() + bc * HW;
      for (int64_t i = 0; i < HW; ++i) dxr[i] += g;
    }
  });
}

template <class T>
Var<T> bilinear_up2(const Var<T>& x) {
  Tensor<T> y = bilinear_up2_fwd(x.val());
  const int64_t H = x.dim(2), W = x.dim(3);
  return make_op<T>(std::move(y), {x}, [H, W](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    bilinear_up2_bwd(o.grad, H, W, &p->grad);
  });
}

template <class T>
Var<T> nearest_resize(const Var<T>& x, int64_t Ho, int64_t Wo) {
  Tensor<T> y = nearest_resize_fwd(x.val(), Ho, Wo);
  const int64_t H = x.dim(2), W = x.dim(3);
  return make_op<T>(std::move(y), {x}, [H, W](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    nearest_resize_bwd(o.grad, H, W, &p->grad);
  });
}

template <class T>
Var<T> groupnorm(const Var<T>& x, int64_t G, const Var<T>& gain, const Var<T>& bias,
                 T eps = T(1e-5)) {
  Tensor<T> mean, invstd;
  Tensor<T> y = groupnorm_fwd(x.val(), G, gain.val().ptr(), bias.val().ptr(), eps, &mean, &invstd);
  return make_op<T>(std::move(y), {x, gain, bias},
                    [G, mean = std::move(mean), invstd = std::move(invstd)](Node<T>& o) {
                      auto& px = o.parents[0];
                      auto& pg = o.parents[1];
                      auto& pb = o.parents[2];
                      groupnorm_bwd(px->val, o.grad, G, pg->val.ptr(), mean, invstd,
                                    px->needs_grad ? &px->grad : nullptr,
                                    pg->needs_grad ? pg->grad.ptr() : nullptr,
                                    pb->needs_grad ? pb->grad.ptr() : nullptr);
                    });
}

// Softmax over the last dim of a 2D tensor.
template <class T>
Var<T> softmax_rows(const Var<T>& x) {
  const int64_t M = x.dim(0), N = x.dim(1);
  Tensor<T> v(x.shape());
  for (int64_t m = 0; m < M; ++m) {
    const T* xr = x.val().ptr() + m * N;
    T* vr = v.ptr() + m * N;
    T mx = xr[0];
    for (int64_t n = 1; n < N; ++n) mx = std::max(mx, xr[n]);
    T s = 0;
    for (int64_t n = 0; n < N; ++n) {
      vr[n] = std::exp(xr[n] - mx);
      s += vr[n];
    }
    for (int64_t n = 0; n < N; ++n) vr[n] /= s;
  }
  return make_op<T>(std::move(v), {x}, [M, N](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    for (int64_t m = 0; m < M; ++m) {
      const T* y = o.val.ptr() + m * N;
      const T* gy = o.grad.ptr() + m * N;
      T dot = 0;
      for (int64_t n = 0; n < N; ++n) dot += y[n] * gy[n];
      T* gx = p->grad.ptr() + m * N;
      for (int64_t n = 0; n < N; ++n) gx[n] += y[n] * (gy[n] - dot);
    }
  });
}

// LayerNorm over the last dim of a 2D tensor.
template <class T>
Var<T> layernorm_rows(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  const int64_t M = x.dim(0), N = x.dim(1);
  check_shape(gain.numel() == N && bias.numel() == N, "layernorm affine size");
  Tensor<T> v(x.shape()), mean({M}), invstd({M});
  for (int64_t m = 0; m < M; ++m) {
    const T* xr = x.val().ptr() + m * N;
    T mu = 0;
    for (int64_t n = 0; n < N; ++n) mu += xr[n];
    mu /= static_cast<T>(N);
    T var = 0;
    for (int64_t n = 0; n < N; ++n) var += (xr[n] - mu) * (xr[n] - mu);
    var /= static_cast<T>(N);
    const T istd = T(1) / std::sqrt(var + eps);
    mean[m] = mu;
    invstd[m] = istd;
    T* vr = v.ptr() + m * N;
    for (int64_t n = 0; n < N; ++n)
      vr[n] = gain.val()[n] * (xr[n] - mu) * istd + bias.val()[n];
  }
  return make_op<T>(std::move(v), {x, gain, bias},
                    [M, N, mean = std::move(mean), invstd = std::move(invstd)](Node<T>& o) {
                      auto& px = o.parents[0];
                      auto& pg = o.parents[1];
                      auto& pb = o.parents[2];
                      for (int64_t m = 0; m < M; ++m) {
                        const T* xr = px->val.ptr() + m * N;
                        const T* gy = o.grad.ptr() + m * N;
                        const T mu = mean[m], istd = invstd[m];
                        T s1 = 0, s2 = 0;
                        for (int64_t n = 0; n < N; ++n) {
                          const T xh = (xr[n] - mu) * istd;
                          const T dxh = gy[n] * pg->val[n];
                          s1 += dxh;
                          s2 += dxh * xh;
                          if (pg->needs_grad) pg->grad[n] += gy[n] * xh;
                          if (pb->needs_grad) pb->grad[n] += gy[n];
                        }
                        if (px->needs_grad) {
                          T* gx = px->grad.ptr() + m * N;
                          for (int64_t n = 0; n < N; ++n) {
                            const T xh = (xr[n] - mu) * istd;
                            const T dxh = gy[n] * pg->val[n];
                            gx[n] += istd * (dxh - (s1 + xh * s2) / static_cast<T>(N));
                          }
                        }
                      }
                    });
}

// ---------------------------------------------------------------- reductions

template <class T>
Var<T> sum_all(const Var<T>& x) {
  T s = 0;
  for (int64_t i = 0; i < x.numel(); ++i) s += x.val()[i];
  return make_op<T>(Tensor<T>::scalar(s), {x}, [](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    const T g = o.grad[0];
    for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] += g;
  });
}

template <class T>
Var<T> mean_all(const Var<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

template <class T>
T scalar_of(const Var<T>& x) {
  return x.val()[0];
}

// Numerically stable binary cross-entropy with logits, summed over all
// elements: sum( max(z,0) - z*t + log(1+exp(-|z|)) ).
template <class T>
Var<T> bce_with_logits_sum(const Var<T>& logits, const Tensor<T>& targets) {
  check_shape(logits.shape() == targets.shape, "bce shapes");
  T s = 0;
  for (int64_t i = 0; i < logits.numel(); ++i) {
    const T z = logits.val()[i], t = targets[i];
    s += std::max(z, T(0)) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  return make_op<T>(Tensor<T>::scalar(s), {logits}, [targets](Node<T>& o) {
    auto& p = o.parents[0];
    if (!p->needs_grad) return;
    const T g = o.grad[0];
    for (int64_t i = 0; i < p->grad.numel(); ++i) {
      const T z = p->val[i];
      const T sig = T(1) / (T(1) + std::exp(-z));
      p->grad[i] += g * (sig - targets[i]);
    }
  });
}

}  // namespace fusedet::ops
