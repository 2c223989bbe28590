#pragma once

#include <cstdint>
#include <vector>

#include "fusedet/core/gemm.hpp"
#include "fusedet/core/tensor.hpp"

namespace fusedet {

enum class PadMode { Zero, Reflect };

namespace detail {

// Reflect index without edge repetition (-1 -> 1, H -> H-2).
inline int64_t reflect_idx(int64_t i, int64_t n) {
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return i;
}

template <class T>
std::vector<T>& conv_scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

}  // namespace detail

inline int64_t conv_out_size(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// x: one image [C,H,W] -> col [C*kh*kw, Ho*Wo] row-major.
template <class T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, PadMode mode, int64_t Ho, int64_t Wo, T* col) {
  const int64_t N = Ho * Wo;
  for (int64_t c = 0; c < C; ++c) {
    const T* xc = x + c * H * W;
    for (int64_t i = 0; i < kh; ++i) {
      for (int64_t j = 0; j < kw; ++j) {
        T* row = col + ((c * kh + i) * kw + j) * N;
        for (int64_t ho = 0; ho < Ho; ++ho) {
          const int64_t h = ho * stride - pad + i;
          const bool h_in = (h >= 0 && h < H);
          const int64_t hm = h_in ? h : (mode == PadMode::Reflect ? detail::reflect_idx(h, H) : -1);
          T* dst = row + ho * Wo;
          for (int64_t wo = 0; wo < Wo; ++wo) {
            const int64_t w = wo * stride - pad + j;
            if (hm >= 0 && w >= 0 && w < W) {
              dst[wo] = xc[hm * W + w];
            } else if (mode == PadMode::Reflect) {
              dst[wo] = xc[detail::reflect_idx(hm < 0 ? h : hm, H) * W + detail::reflect_idx(w, W)];
            } else {
              dst[wo] = T(0);
            }
          }
        }
      }
    }
  }
}

// Scatter-add of col-gradient back to an image gradient (transpose of im2col).
template <class T>
void col2im_add(const T* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, PadMode mode, int64_t Ho, int64_t Wo, T* dx) {
  const int64_t N = Ho * Wo;
  for (int64_t c = 0; c < C; ++c) {
    T* xc = dx + c * H * W;
    for (int64_t i = 0; i < kh; ++i) {
      for (int64_t j = 0; j < kw; ++j) {
        const T* row = col + ((c * kh + i) * kw + j) * N;
        for (int64_t ho = 0; ho < Ho; ++ho) {
          const int64_t h = ho * stride - pad + i;
          for (int64_t wo = 0; wo < Wo; ++wo) {
            const int64_t w = wo * stride - pad + j;
            int64_t hm = h, wm = w;
            if (h < 0 || h >= H || w < 0 || w >= W) {
              if (mode == PadMode::Zero) continue;
              hm = detail::reflect_idx(h, H);
              wm = detail::reflect_idx(w, W);
            }
            xc[hm * W + wm] += row[ho * Wo + wo];
          }
        }
      }
    }
  }
}

// Grouped 2D convolution, NCHW. w: [Cout, Cin/groups, kh, kw].
template <class T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const T* bias, int64_t stride,
                     int64_t pad, PadMode mode, int64_t groups) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = w.dim(0), Cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  check_shape(C == Cg * groups, "conv2d: input channels " + std::to_string(C) + " vs weight " +
                                    std::to_string(Cg) + "x" + std::to_string(groups));
  check_shape(Cout % groups == 0, "conv2d: Cout not divisible by groups");
  const int64_t Ho = conv_out_size(H, kh, stride, pad), Wo = conv_out_size(W, kw, stride, pad);
  Tensor<T> y({B, Cout, Ho, Wo});
  const int64_t Mg = Cout / groups, Kg = Cg * kh * kw, N = Ho * Wo;

  if (groups == C && Cg == 1) {
    // Depthwise path: direct loops, no im2col.
    const int64_t mult = Cout / C;
    parallel_for(B * Cout, [&](int64_t bc) {
      const int64_t b = bc / Cout, co = bc % Cout, c = co / mult;
      const T* xc = x.ptr() + (b * C + c) * H * W;
      const T* wk = w.ptr() + co * kh * kw;
      T* yc = y.ptr() + (b * Cout + co) * Ho * Wo;
      const T bv = bias ? bias[co] : T(0);
      for (int64_t ho = 0; ho < Ho; ++ho)
        for (int64_t wo = 0; wo < Wo; ++wo) {
          T s = bv;
          for (int64_t i = 0; i < kh; ++i) {
            const int64_t h = ho * stride - pad + i;
            const int64_t hm = (h >= 0 && h < H)                ? h
                               : (mode == PadMode::Reflect) ? detail::reflect_idx(h, H)
                                                            : -1;
            if (hm < 0) continue;
            for (int64_t j = 0; j < kw; ++j) {
              const int64_t ww = wo * stride - pad + j;
              if (ww >= 0 && ww < W)
                s += wk[i * kw + j] * xc[hm * W + ww];
              else if (mode == PadMode::Reflect)
                s += wk[i * kw + j] * xc[hm * W + detail::reflect_idx(ww, W)];
            }
          }
          yc[ho * Wo + wo] = s;
        }
    });
    return y;
  }

  parallel_for(B, [&](int64_t b) {
    auto& col = detail::conv_scratch<T>();
    col.resize(static_cast<size_t>(Kg * N));
    for (int64_t g = 0; g < groups; ++g) {
      im2col(x.ptr() + (b * C + g * Cg) * H * W, Cg, H, W, kh, kw, stride, pad, mode, Ho, Wo,
             col.data());
      T* yg = y.ptr() + (b * Cout + g * Mg) * N;
      gemm<T>(false, false, Mg, N, Kg, T(1), w.ptr() + g * Mg * Kg, Kg, col.data(), N, T(0), yg, N);
      if (bias) {
        for (int64_t m = 0; m < Mg; ++m) {
          const T bv = bias[g * Mg + m];
          T* row = yg + m * N;
          for (int64_t n = 0; n < N; ++n) row[n] += bv;
        }
      }
    }
  });
  return y;
}

// Gradients of conv2d. Any of dx/dw/dbias may be null to skip.
template <class T>
void conv2d_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, int64_t stride,
                int64_t pad, PadMode mode, int64_t groups, Tensor<T>* dx, Tensor<T>* dw,
                Tensor<T>* dbias) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = w.dim(0), Cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int64_t Ho = dy.dim(2), Wo = dy.dim(3);
  const int64_t Mg = Cout / groups, Kg = Cg * kh * kw, N = Ho * Wo;

  if (dbias) {
    for (int64_t b = 0; b < B; ++b)
      for (int64_t co = 0; co < Cout; ++co) {
        const T* row = dy.ptr() + (b * Cout + co) * N;
        T s = 0;
        for (int64_t n = 0; n < N; ++n) s += row[n];
        (*dbias)[co] += s;
      }
  }

  if (groups == C && Cg == 1) {
    const int64_t mult = Cout / C;
    if (dw) {
      for (int64_t b = 0; b < B; ++b)
        for (int64_t co = 0; co < Cout; ++co) {
          const int64_t c = co / mult;
          const T* xc = x.ptr() + (b * C + c) * H * W;
          const T* dyc = dy.ptr() + (b * Cout + co) * Ho * Wo;
          T* dwk = dw->ptr() + co * kh * kw;
          for (int64_t i = 0; i < kh; ++i)
            for (int64_t j = 0; j < kw; ++j) {
              T s = 0;
              for (int64_t ho = 0; ho < Ho; ++ho) {
                const int64_t h = ho * stride - pad + i;
                const int64_t hm = (h >= 0 && h < H)                ? h
                                   : (mode == PadMode::Reflect) ? detail::reflect_idx(h, H)
                                                                : -1;
                if (hm < 0) continue;
                for (int64_t wo = 0; wo < Wo; ++wo) {
                  const int64_t ww = wo * stride - pad + j;
                  if (ww >= 0 && ww < W)
                    s += dyc[ho * Wo + wo] * xc[hm * W + ww];
                  else if (mode == PadMode::Reflect)
                    s += dyc[ho * Wo + wo] * xc[hm * W + detail::reflect_idx(ww, W)];
                }
              }
              dwk[i * kw + j] += s;
            }
        }
    }
    if (dx) {
      parallel_for(B * C, [&](int64_t bc) {
        const int64_t b = bc / C, c = bc % C;
        T* dxc = dx->ptr() + (b * C + c) * H * W;
        for (int64_t u = 0; u < mult; ++u) {
          const int64_t co = c * mult + u;
          const T* dyc = dy.ptr() + (b * Cout + co) * Ho * Wo;
          const T* wk = w.ptr() + co * kh * kw;
          for (int64_t ho = 0; ho < Ho; ++ho)
            for (int64_t wo = 0; wo < Wo; ++wo) {
              const T g = dyc[ho * Wo + wo];
              for (int64_t i = 0; i < kh; ++i) {
                int64_t h = ho * stride - pad + i;
                if (h < 0 || h >= H) {
                  if (mode == PadMode::Zero) continue;
                  h = detail::reflect_idx(h, H);
                }
                for (int64_t j = 0; j < kw; ++j) {
                  int64_t ww = wo * stride - pad + j;
                  if (ww < 0 || ww >= W) {
                    if (mode == PadMode::Zero) continue;
                    ww = detail::reflect_idx(ww, W);
                  }
                  dxc[h * W + ww] += g * wk[i * kw + j];
                }
              }
            }
        }
      });
    }
    return;
  }

  if (dw) {
    // Sequential over batch so accumulation order is fixed.
    auto& col = detail::conv_scratch<T>();
    col.resize(static_cast<size_t>(Kg * N));
    for (int64_t b = 0; b < B; ++b)
      for (int64_t g = 0; g < groups; ++g) {
        im2col(x.ptr() + (b * C + g * Cg) * H * W, Cg, H, W, kh, kw, stride, pad, mode, Ho, Wo,
               col.data());
        gemm<T>(false, true, Mg, Kg, N, T(1), dy.ptr() + (b * Cout + g * Mg) * N, N, col.data(), N,
                T(1), dw->ptr() + g * Mg * Kg, Kg);
      }
  }
  if (dx) {
    parallel_for(B, [&](int64_t b) {
      std::vector<T> colg(static_cast<size_t>(Kg * N));
      for (int64_t g = 0; g < groups; ++g) {
        std::fill(colg.begin(), colg.end(), T(0));
        gemm<T>(true, false, Kg, N, Mg, T(1), w.ptr() + g * Mg * Kg, Kg,
                dy.ptr() + (b * Cout + g * Mg) * N, N, T(0), colg.data(), N);
        col2im_add(colg.data(), Cg, H, W, kh, kw, stride, pad, mode, Ho, Wo,
                   dx->ptr() + (b * C + g * Cg) * H * W);
      }
    });
  }
}

inline int64_t pool_out_size(int64_t in, int64_t k, int64_t stride, bool ceil_mode) {
  if (ceil_mode) return (in - k + stride - 1) / stride + 1;
  return (in - k) / stride + 1;
}

// Max pooling; argmax (flat h*W+w) recorded per output for the backward pass.
// Ties resolve to the first element in scan order.
template <class T>
Tensor<T> maxpool2d_fwd(const Tensor<T>& x, int64_t k, int64_t stride, bool ceil_mode,
                        Tensor<int32_t>* argmax) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = pool_out_size(H, k, stride, ceil_mode);
  const int64_t Wo = pool_out_size(W, k, stride, ceil_mode);
  Tensor<T> y({B, C, Ho, Wo});
  if (argmax) *argmax = Tensor<int32_t>({B, C, Ho, Wo});
  parallel_for(B * C, [&](int64_t bc) {
    const T* xc = x.ptr() + bc * H * W;
    T* yc = y.ptr() + bc * Ho * Wo;
    int32_t* am = argmax ? argmax->ptr() + bc * Ho * Wo : nullptr;
    for (int64_t ho = 0; ho < Ho; ++ho)
      for (int64_t wo = 0; wo < Wo; ++wo) {
        const int64_t h0 = ho * stride, w0 = wo * stride;
        const int64_t h1 = std::min(h0 + k, H), w1 = std::min(w0 + k, W);
        T best = xc[h0 * W + w0];
        int64_t bi = h0 * W + w0;
        for (int64_t h = h0; h < h1; ++h)
          for (int64_t w = w0; w < w1; ++w) {
            const T v = xc[h * W + w];
            if (v > best) {
              best = v;
              bi = h * W + w;
            }
          }
        yc[ho * Wo + wo] = best;
        if (am) am[ho * Wo + wo] = static_cast<int32_t>(bi);
      }
  });
  return y;
}

template <class T>
void maxpool2d_bwd(const Tensor<int32_t>& argmax, const Tensor<T>& dy, int64_t H, int64_t W,
                   Tensor<T>* dx) {
  const int64_t BC = dy.dim(0) * dy.dim(1), N = dy.dim(2) * dy.dim(3);
  for (int64_t bc = 0; bc < BC; ++bc) {
    const T* dyc = dy.ptr() + bc * N;
    const int32_t* am = argmax.ptr() + bc * N;
    T* dxc = dx->ptr() + bc * H * W;
    for (int64_t n = 0; n < N; ++n) dxc[am[n]] += dyc[n];
  }
}

// Exact x2 bilinear upsampling (half-pixel centers, edges clamped).
template <class T>
Tensor<T> bilinear_up2_fwd(const Tensor<T>& x) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t H2 = H * 2, W2 = W * 2;
  Tensor<T> y({B, C, H2, W2});
  auto src = [](int64_t i, int64_t n, int64_t& i0, T& w1) {
    const double v = (static_cast<double>(i) + 0.5) / 2.0 - 0.5;
    double f = std::floor(v);
    i0 = static_cast<int64_t>(f);
    w1 = static_cast<T>(v - f);
    if (i0 < 0) {
      i0 = 0;
      w1 = 0;
    }
    if (i0 >= n - 1) {
      i0 = n - 1;
      w1 = 0;
    }
  };
  parallel_for(B * C, [&](int64_t bc) {
    const T* xc = x.ptr() + bc * H * W;
    T* yc = y.ptr() + bc * H2 * W2;
    for (int64_t i = 0; i < H2; ++i) {
      int64_t h0;
      T wh;
      src(i, H, h0, wh);
      const int64_t h1 = std::min(h0 + 1, H - 1);
      for (int64_t j = 0; j < W2; ++j) {
        int64_t w0;
        T ww;
        src(j, W, w0, ww);
        const int64_t w1i = std::min(w0 + 1, W - 1);
        yc[i * W2 + j] = (T(1) - wh) * ((T(1) - ww) * xc[h0 * W + w0] + ww * xc[h0 * W + w1i]) +
                         wh * ((T(1) - ww) * xc[h1 * W + w0] + ww * xc[h1 * W + w1i]);
      }
    }
  });
  return y;
}

template <class T>
void bilinear_up2_bwd(const Tensor<T>& dy, int64_t H, int64_t W, Tensor<T>* dx) {
  const int64_t BC = dy.dim(0) * dy.dim(1), H2 = dy.dim(2), W2 = dy.dim(3);
  auto src = [](int64_t i, int64_t n, int64_t& i0, T& w1) {
    const double v = (static_cast<double>(i) + 0.5) / 2.0 - 0.5;
    double f = std::floor(v);
    i0 = static_cast<int64_t>(f);
    w1 = static_cast<T>(v - f);
    if (i0 < 0) {
      i0 = 0;
      w1 = 0;
    }
    if (i0 >= n - 1) {
      i0 = n - 1;
      w1 = 0;
    }
  };
  for (int64_t bc = 0; bc < BC; ++bc) {
    const T* dyc = dy.ptr() + bc * H2 * W2;
    T* dxc = dx->ptr() + bc * H * W;
    for (int64_t i = 0; i < H2; ++i) {
      int64_t h0;
      T wh;
      src(i, H, h0, wh);
      const int64_t h1 = std::min(h0 + 1, H - 1);
      for (int64_t j = 0; j < W2; ++j) {
        int64_t w0;
        T ww;
        src(j, W, w0, ww);
        const int64_t w1i = std::min(w0 + 1, W - 1);
        const T g = dyc[i * W2 + j];
        dxc[h0 * W + w0] += (T(1) - wh) * (T(1) - ww) * g;
        dxc[h0 * W + w1i] += (T(1) - wh) * ww * g;
        dxc[h1 * W + w0] += wh * (T(1) - ww) * g;
        dxc[h1 * W + w1i] += wh * ww * g;
      }
    }
  }
}

// Nearest-neighbor resize to (Ho, Wo).
template <class T>
Tensor<T> nearest_resize_fwd(const Tensor<T>& x, int64_t Ho, int64_t Wo) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> y({B, C, Ho, Wo});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* xc = x.ptr() + bc * H * W;
    T* yc = y.ptr() + bc * Ho * Wo;
    for (int64_t i = 0; i < Ho; ++i) {
      const int64_t h = std::min(H - 1, i * H / Ho);
      for (int64_t j = 0; j < Wo; ++j) yc[i * Wo + j] = xc[h * W + std::min(W - 1, j * W / Wo)];
    }
  }
  return y;
}

template <class T>
void nearest_resize_bwd(const Tensor<T>& dy, int64_t H, int64_t W, Tensor<T>* dx) {
  const int64_t BC = dy.dim(0) * dy.dim(1), Ho = dy.dim(2), Wo = dy.dim(3);
  for (int64_t bc = 0; bc < BC; ++bc) {
    const T* dyc = dy.ptr() + bc * Ho * Wo;
    T* dxc = dx->ptr() + bc * H * W;
    for (int64_t i = 0; i < Ho; ++i) {
      const int64_t h = std::min(H - 1, i * H / Ho);
      for (int64_t j = 0; j < Wo; ++j)
        dxc[h * W + std::min(W - 1, j * W / Wo)] += dyc[i * Wo + j];
    }
  }
}

// Group normalization over (C/G, H, W) per sample/group.
// Returns y; mean/invstd saved per (b,g) for the backward pass.
template <class T>
Tensor<T> groupnorm_fwd(const Tensor<T>& x, int64_t G, const T* gain, const T* bias, T eps,
                        Tensor<T>* mean_out, Tensor<T>* invstd_out) {
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const int64_t Cg = C / G, n = Cg * HW;
  Tensor<T> y(x.shape);
  if (mean_out) *mean_out = Tensor<T>({B, G});
  if (invstd_out) *invstd_out = Tensor<T>({B, G});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t g = 0; g < G; ++g) {
      const T* xg = x.ptr() + (b * C + g * Cg) * HW;
      T mu = 0;
      for (int64_t i = 0; i < n; ++i) mu += xg[i];
      mu /= static_cast<T>(n);
      T var = 0;
      for (int64_t i = 0; i < n; ++i) {
        const T d = xg[i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(n);
      const T istd = T(1) / std::sqrt(var + eps);
      if (mean_out) mean_out->at2(b, g) = mu;
      if (invstd_out) invstd_out->at2(b, g) = istd;
      T* yg = y.ptr() + (b * C + g * Cg) * HW;
      for (int64_t c = 0; c < Cg; ++c) {
        const T ga = gain ? gain[g * Cg + c] : T(1);
        const T be = bias ? bias[g * Cg + c] : T(0);
        const T* xr = xg + c * HW;
        T* yr = yg + c * HW;
        for (int64_t i = 0; i < HW; ++i) yr[i] = ga * (xr[i] - mu) * istd + be;
      }
    }
  return y;
}

template <class T>
void groupnorm_bwd(const Tensor<T>& x, const Tensor<T>& dy, int64_t G, const T* gain,
                   const Tensor<T>& mean, const Tensor<T>& invstd, Tensor<T>* dx, T* dgain,
                   T* dbias) {
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const int64_t Cg = C / G, n = Cg * HW;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t g = 0; g < G; ++g) {
      const T* xg = x.ptr() + (b * C + g * Cg) * HW;
      const T* dyg = dy.ptr() + (b * C + g * Cg) * HW;
      const T mu = mean.at2(b, g), istd = invstd.at2(b, g);
      T s1 = 0, s2 = 0;
      for (int64_t c = 0; c < Cg; ++c) {
        const T ga = gain ? gain[g * Cg + c] : T(1);
        const T* xr = xg + c * HW;
        const T* dyr = dyg + c * HW;
        T dg = 0, db = 0;
        for (int64_t i = 0; i < HW; ++i) {
          const T xh = (xr[i] - mu) * istd;
          const T dxh = dyr[i] * ga;
          s1 += dxh;
          s2 += dxh * xh;
          dg += dyr[i] * xh;
          db += dyr[i];
        }
        if (dgain) dgain[g * Cg + c] += dg;
        if (dbias) dbias[g * Cg + c] += db;
      }
      if (dx) {
        T* dxg = dx->ptr() + (b * C + g * Cg) * HW;
        const T inv_n = T(1) / static_cast<T>(n);
        for (int64_t c = 0; c < Cg; ++c) {
          const T ga = gain ? gain[g * Cg + c] : T(1);
          const T* xr = xg + c * HW;
          const T* dyr = dyg + c * HW;
          T* dxr = dxg + c * HW;
          for (int64_t i = 0; i < HW; ++i) {
            const T xh = (xr[i] - mu) * istd;
            const T dxh = dyr[i] * ga;
            dxr[i] += istd * (dxh - inv_n * (s1 + xh * s2));
          }
        }
      }
    }
}

}  // namespace fusedet
