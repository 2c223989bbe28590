#pragma once

#include "fusedet/core/nn.hpp"

namespace fusedet::fusion {

// Two-stage adaptive cross-modal fusion.
//
// Stage 1 (feature synchronization): a 2-channel gate map
//   W = sigmoid(Proj(concat(F_I', F_R')))
// modulates the projected image/radar features, combined with both linear
// and bilinear terms:
//   F_o = W0*F_I' + W1*F_R' + (W0*F_I')*(W1*F_R').
//
// Stage 2 (feature selection enhancement): the fused radar-side feature is
// aligned back to the image width by a 3x3 conv, channel attention
//   w_A = sigmoid(GN(Conv1x1(GAP(R'))))
// selects informative channels, and the image feature is enhanced as
//   I_e = (1 + Norm(w_A*R' + R')) * F_I
// where Norm is a GroupNorm whose gain is zero-initialized, so the whole
// module is an exact identity on F_I at initialization.

template <class T>
struct FusionOutput {
  Var<T> enhanced_image;  // I_e, consumed by the vision backbone
  Var<T> fused;           // F_o, radar-side fused representation
};

template <class T>
struct Afif {
  nn::Conv2d<T> proj_i, proj_r;          // 1x1 to the common fusion width
  nn::Conv2d<T> gate1, gate2;            // Proj: 3x3 then 1x1 down to 2 channels
  nn::Conv2d<T> align;                   // 3x3, fusion width -> image width
  nn::Conv2d<T> attn_fc;                 // 1x1 on pooled features
  nn::GroupNorm<T> attn_gn, enhance_gn;  // enhance_gn gain starts at zero
  int64_t img_ch = 0, fuse_ch = 0;
  bool fse_on_fused = true;  // Eq. 4 input: stage-1 output (default) or raw radar

  Afif() = default;
  Afif(ParamStore<T>& ps, const std::string& name, int64_t img_ch_, int64_t radar_ch,
       int64_t fuse_ch_, int64_t gate_width = 8, bool fse_on_fused_ = true)
      : proj_i(ps, name + ".pi", img_ch_, fuse_ch_, 1),
        proj_r(ps, name + ".pr", radar_ch, fuse_ch_, 1),
        gate1(ps, name + ".g1", 2 * fuse_ch_, gate_width, 3),
        gate2(ps, name + ".g2", gate_width, 2, 1),
        align(ps, name + ".align", fuse_ch_, img_ch_, 3),
        attn_fc(ps, name + ".attn", img_ch_, img_ch_, 1),
        // Pooled features are 1x1 spatial; fewer groups keep the per-group
        // sample count > 1 so the normalization stays informative.
        attn_gn(ps, name + ".agn", img_ch_, 4),
        enhance_gn(ps, name + ".egn", img_ch_, 8, /*gain_init=*/T(0)),
        img_ch(img_ch_),
        fuse_ch(fuse_ch_),
        fse_on_fused(fse_on_fused_) {}

  // Eq. 2: two cascaded convs compress the concatenated features to 2
  // channels; sigmoid keeps every gate strictly inside (0,1).
  Var<T> fsf_weights(const Var<T>& fi, const Var<T>& fr) const {
    check_shape(fi.dim(2) == fr.dim(2) && fi.dim(3) == fr.dim(3), "fsf_weights spatial mismatch");
    Var<T> h = ops::silu(gate1.forward(ops::concat_ch<T>({fi, fr})));
    return ops::sigmoid(gate2.forward(h));
  }

  // Eq. 3 on pre-projected same-width features; each gate channel broadcasts
  // across feature channels.
  static Var<T> fsf_combine(const Var<T>& fi, const Var<T>& fr, const Var<T>& w) {
    check_shape(fi.shape() == fr.shape(), "fsf_combine operand shapes");
    check_shape(w.dim(1) == 2, "fsf_combine expects a 2-channel weight map");
    Var<T> w0 = ops::slice_ch(w, 0, 1);
    Var<T> w1 = ops::slice_ch(w, 1, 2);
    Var<T> gi = ops::mul_spatial(fi, w0);
    Var<T> gr = ops::mul_spatial(fr, w1);
    return ops::add(ops::add(gi, gr), ops::mul(gi, gr));
  }

  // Eq. 4: channel attention from pooled, aligned radar features.
  std::pair<Var<T>, Var<T>> fse_attention(const Var<T>& rp) const {
    Var<T> aligned = align.forward(rp);
    Var<T> wa = ops::sigmoid(attn_gn.forward(attn_fc.forward(ops::global_avg_pool(aligned))));
    return {aligned, wa};
  }

  // Eqs. 5-6.
  Var<T> fse_enhance(const Var<T>& rp, const Var<T>& image_feat) const {
    auto [aligned, wa] = fse_attention(rp);
    Var<T> selected = ops::mul_channel(aligned, wa);
    Var<T> norm = enhance_gn.forward(ops::add(selected, aligned));
    return ops::mul(image_feat, ops::add_const(norm, T(1)));
  }

  FusionOutput<T> forward(const Var<T>& image_feat, const Var<T>& radar_feat) const {
    Var<T> fi = proj_i.forward(image_feat);
    Var<T> fr = proj_r.forward(radar_feat);
    Var<T> w = fsf_weights(fi, fr);
    FusionOutput<T> out;
    out.fused = fsf_combine(fi, fr, w);
    out.enhanced_image = fse_enhance(fse_on_fused ? out.fused : fr, image_feat);
    return out;
  }
};

}  // namespace fusedet::fusion
