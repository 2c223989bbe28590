#pragma once

#include <array>
#include <vector>

#include "fusedet/enc/hifa.hpp"
#include "fusedet/vision/backbone.hpp"

namespace fusedet::enc {

// Conv refinement block: three 3x3 conv-norm-act stages with a 1x1 bypass.
template <class T>
struct RepC3 {
  nn::Conv2d<T> c1, c2, c3, bypass;
  nn::GroupNorm<T> n1, n2, n3;

  RepC3() = default;
  RepC3(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout)
      : c1(ps, name + ".c1", cin, cout, 3),
        c2(ps, name + ".c2", cout, cout, 3),
        c3(ps, name + ".c3", cout, cout, 3),
        bypass(ps, name + ".bp", cin, cout, 1),
        n1(ps, name + ".n1", cout),
        n2(ps, name + ".n2", cout),
        n3(ps, name + ".n3", cout) {}

  Var<T> forward(const Var<T>& x) const {
    Var<T> h = ops::silu(n1.forward(c1.forward(x)));
    h = ops::silu(n2.forward(c2.forward(h)));
    h = ops::silu(n3.forward(c3.forward(h)));
    return ops::add(h, bypass.forward(x));
  }
};

// Flattened multi-level encoder output: one token per refined-map cell, with
// level ids and normalized (x, y) centers in [0,1]^2.
template <class T>
struct EncoderMemory {
  Var<T> tokens;                                  // [B, T, C]
  Tensor<T> positions;                            // [T, 2]
  std::vector<int> level_id;                      // [T]
  std::vector<std::array<int64_t, 2>> level_hw;   // per level (H, W)
  std::vector<Var<T>> refined;                    // per-level maps [B, C, H, W]
  int64_t token_count() const { return tokens.dim(1); }
};

// Hybrid encoder pathway: lateral 1x1 projections, HiFA context injection at
// the mid level, top-down then bottom-up diffusion with RepC3 refinement,
// and flattening into token memory. The pathway is convolutional; an
// optional self-attention block over the coarsest level is available for
// experimentation (encoder_attention=top_level).
template <class T>
struct HybridEncoder {
  nn::Conv2d<T> lat3, lat4, lat5;
  ScaleAlign<T> align;
  HifaFuse<T> hifa;
  RepC3<T> td4, td3, bu4, bu5;
  nn::Conv2d<T> down34, down45;
  nn::MultiheadAttention<T> top_attn;
  nn::LayerNorm<T> top_attn_ln;
  bool hifa_enabled = true;
  bool top_attention = false;
  int64_t c_e = 48;

  HybridEncoder() = default;
  HybridEncoder(ParamStore<T>& ps, const std::string& name, int64_t c3, int64_t c4, int64_t c5,
                int64_t c_e_, bool hifa_on, int64_t chunks = 3, bool top_attention_ = false,
                int64_t attn_heads = 2)
      : lat3(ps, name + ".lat3", c3, c_e_, 1),
        lat4(ps, name + ".lat4", c4, c_e_, 1),
        lat5(ps, name + ".lat5", c5, c_e_, 1),
        align(ps, name + ".align", c5, c4, c3, c_e_),
        hifa(ps, name + ".hifa", c_e_, chunks),
        td4(ps, name + ".td4", 2 * c_e_, c_e_),
        td3(ps, name + ".td3", 2 * c_e_, c_e_),
        bu4(ps, name + ".bu4", 2 * c_e_, c_e_),
        bu5(ps, name + ".bu5", 2 * c_e_, c_e_),
        down34(ps, name + ".d34", c_e_, c_e_, 3, 2),
        down45(ps, name + ".d45", c_e_, c_e_, 3, 2),
        hifa_enabled(hifa_on),
        top_attention(top_attention_),
        c_e(c_e_) {
    if (top_attention_) {
      top_attn = nn::MultiheadAttention<T>(ps, name + ".topattn", c_e_, attn_heads);
      top_attn_ln = nn::LayerNorm<T>(ps, name + ".topln", c_e_);
    }
  }

  EncoderMemory<T> forward(const vision::PyramidFeatures<T>& pyr) const {
    Var<T> l3 = lat3.forward(pyr.p3);
    Var<T> l4 = lat4.forward(pyr.p4);
    Var<T> l5 = lat5.forward(pyr.p5);
    if (hifa_enabled) {
      // One aligned (P3,P4,P5) triple at the P4 size injects cross-scale
      // context into the mid level; with hifa off this reduces to a plain
      // FPN-style merge.
      ScaleTriple<T> t = align.forward(pyr.p5, pyr.p4, pyr.p3);
      l4 = ops::add(l4, hifa.forward(t));
    }
    if (top_attention) {
      // Self-attention over the coarsest level only.
      const int64_t B = l5.dim(0), H = l5.dim(2), W = l5.dim(3);
      Var<T> toks = ops::flatten_tokens(l5);
      std::vector<Var<T>> per;
      per.reserve(static_cast<size_t>(B));
      for (int64_t b = 0; b < B; ++b) {
        Var<T> tb = ops::select_batch(toks, b);
        per.push_back(top_attn_ln.forward(ops::add(tb, top_attn.forward(tb, tb, tb))));
      }
      Var<T> stacked = ops::concat_rows(per);
      l5 = ops::unflatten_tokens(ops::reshape(stacked, {B, H * W, c_e}), c_e, H, W);
    }
    Var<T> t5 = l5;
    Var<T> t4 = td4.forward(ops::concat_ch<T>({ops::bilinear_up2(t5), l4}));
    Var<T> t3 = td3.forward(ops::concat_ch<T>({ops::bilinear_up2(t4), l3}));
    Var<T> b3 = t3;
    Var<T> b4 = bu4.forward(ops::concat_ch<T>({down34.forward(b3), t4}));
    Var<T> b5 = bu5.forward(ops::concat_ch<T>({down45.forward(b4), t5}));

    EncoderMemory<T> mem;
    mem.refined = {b3, b4, b5};
    std::vector<Var<T>> toks;
    for (int lvl = 0; lvl < 3; ++lvl) {
      const Var<T>& f = mem.refined[static_cast<size_t>(lvl)];
      mem.level_hw.push_back({f.dim(2), f.dim(3)});
      toks.push_back(ops::flatten_tokens(f));
    }
    // concat along the token dim: reshape to 2D rows per batch is avoided by
    // building the combined tensor directly.
    const int64_t B = toks[0].dim(0);
    int64_t total = 0;
    for (auto& t : toks) total += t.dim(1);
    Tensor<T> combined({B, total, c_e});
    {
      int64_t off = 0;
      for (auto& t : toks) {
        const int64_t L = t.dim(1);
        for (int64_t b = 0; b < B; ++b)
          std::copy(t.val().ptr() + b * L * c_e, t.val().ptr() + (b + 1) * L * c_e,
                    combined.ptr() + (b * total + off) * c_e);
        off += L;
      }
    }
    std::vector<int64_t> lens;
    for (auto& t : toks) lens.push_back(t.dim(1));
    mem.tokens = make_op<T>(std::move(combined), toks, [B, total, lens, ce = c_e](Node<T>& o) {
      int64_t off = 0;
      for (size_t pi = 0; pi < o.parents.size(); ++pi) {
        auto& p = o.parents[pi];
        const int64_t L = lens[pi];
        if (p->needs_grad)
          for (int64_t b = 0; b < B; ++b) {
            const T* src = o.grad.ptr() + (b * total + off) * ce;
            T* dst = p->grad.ptr() + b * L * ce;
            for (int64_t i = 0; i < L * ce; ++i) dst[i] += src[i];
          }
        off += L;
      }
    });

    mem.positions = Tensor<T>({total, 2});
    int64_t tok = 0;
    for (int lvl = 0; lvl < 3; ++lvl) {
      const auto [H, W] = mem.level_hw[static_cast<size_t>(lvl)];
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          mem.positions.at2(tok, 0) = (static_cast<T>(x) + T(0.5)) / static_cast<T>(W);
          mem.positions.at2(tok, 1) = (static_cast<T>(y) + T(0.5)) / static_cast<T>(H);
          mem.level_id.push_back(lvl);
          ++tok;
        }
    }
    return mem;
  }
};

}  // namespace fusedet::enc
