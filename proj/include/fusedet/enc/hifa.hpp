#pragma once

#include "fusedet/core/nn.hpp"

namespace fusedet::enc {

// Hierarchical feature aggregation over three adjacent pyramid levels.
// Naming: x_low is the coarser (deeper) level, x_high the finer one; both
// are aligned to the mid level's spatial size and a common width.

template <class T>
struct ScaleTriple {
  Var<T> low, mid, high;  // identical shapes after alignment
};

template <class T>
struct ScaleAlign {
  nn::Conv2d<T> low_proj, mid_proj, high_proj;  // 1x1 to the shared width
  nn::Conv2d<T> high_down;                      // 3x3 stride-2

  ScaleAlign() = default;
  ScaleAlign(ParamStore<T>& ps, const std::string& name, int64_t c_low, int64_t c_mid,
             int64_t c_high, int64_t c_e)
      : low_proj(ps, name + ".lp", c_low, c_e, 1),
        mid_proj(ps, name + ".mp", c_mid, c_e, 1),
        high_proj(ps, name + ".hp", c_high, c_e, 1),
        high_down(ps, name + ".hd", c_e, c_e, 3, 2) {}

  // p_low coarser (half mid size), p_high finer (double mid size).
  ScaleTriple<T> forward(const Var<T>& p_low, const Var<T>& p_mid, const Var<T>& p_high) const {
    const int64_t H = p_mid.dim(2), W = p_mid.dim(3);
    check_shape(p_low.dim(2) * 2 == H && p_low.dim(3) * 2 == W,
                "scale_align: low level must be half the mid size");
    check_shape(p_high.dim(2) == 2 * H && p_high.dim(3) == 2 * W,
                "scale_align: high level must be double the mid size");
    ScaleTriple<T> t;
    t.low = ops::bilinear_up2(low_proj.forward(p_low));
    t.mid = mid_proj.forward(p_mid);
    t.high = high_down.forward(high_proj.forward(p_high));
    return t;
  }
};

// Chunked sigmoid-gated fusion:
//   fused^(k) = sigma(mid^(k)) * high^(k) + (1 - sigma(mid^(k))) * low^(k)
// computed as low + sigma(mid)*(high - low), which keeps every element inside
// the closed [low, high] interval even in floating point. Chunks are then
// concatenated and passed through a 3x3 output conv.
template <class T>
struct HifaFuse {
  nn::Conv2d<T> out_conv;
  int64_t chunks = 3;

  HifaFuse() = default;
  HifaFuse(ParamStore<T>& ps, const std::string& name, int64_t c_e, int64_t chunks_ = 3)
      : out_conv(ps, name + ".out", c_e, c_e, 3), chunks(chunks_) {
    check_config(c_e % chunks_ == 0, "hifa: channel width must be divisible by K=" +
                                         std::to_string(chunks_));
  }

  // Pre-output-conv gated combination (the Eq. 9 gate-bound surface).
  Var<T> fuse_chunks(const ScaleTriple<T>& t) const {
    check_shape(t.low.shape() == t.mid.shape() && t.mid.shape() == t.high.shape(),
                "hifa_fuse: aligned shapes");
    const int64_t C = t.mid.dim(1);
    check_config(C % chunks == 0, "hifa_fuse: channels not divisible by K");
    const int64_t step = C / chunks;
    std::vector<Var<T>> fused;
    fused.reserve(chunks);
    for (int64_t k = 0; k < chunks; ++k) {
      Var<T> lo = ops::slice_ch(t.low, k * step, (k + 1) * step);
      Var<T> mi = ops::slice_ch(t.mid, k * step, (k + 1) * step);
      Var<T> hi = ops::slice_ch(t.high, k * step, (k + 1) * step);
      Var<T> gate = ops::sigmoid(mi);
      fused.push_back(ops::add(lo, ops::mul(gate, ops::sub(hi, lo))));
    }
    return ops::concat_ch(fused);
  }

  Var<T> forward(const ScaleTriple<T>& t) const { return out_conv.forward(fuse_chunks(t)); }
};

}  // namespace fusedet::enc
