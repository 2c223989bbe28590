#pragma once

#include <array>

#include "fusedet/vision/blocks.hpp"
#include "fusedet/vision/edges.hpp"
#include "fusedet/vision/mseii.hpp"

namespace fusedet::vision {

// Stem: conv(s2) -> conv(s1) -> maxpool(s2), net stride 4. All downstream
// strides (P3/P4/P5 at 8/16/32, radar branch alignment) build on this.
template <class T>
struct VisionStem {
  nn::Conv2d<T> conv1, conv2;
  nn::GroupNorm<T> gn1, gn2;

  VisionStem() = default;
  VisionStem(ParamStore<T>& ps, const std::string& name, int64_t in_ch, int64_t out_ch)
      : conv1(ps, name + ".c1", in_ch, out_ch / 2, 3, 2),
        conv2(ps, name + ".c2", out_ch / 2, out_ch, 3, 1),
        gn1(ps, name + ".n1", out_ch / 2),
        gn2(ps, name + ".n2", out_ch) {}

  Var<T> forward(const Var<T>& image) const {
    check_shape(image.dim(1) == conv1.w.dim(1), "vision stem expects matching input channels");
    Var<T> h = ops::silu(gn1.forward(conv1.forward(image)));
    h = ops::silu(gn2.forward(conv2.forward(h)));
    return ops::maxpool2d(h, 2, 2);
  }
};

template <class T>
struct PyramidFeatures {
  Var<T> p3, p4, p5;  // strides 8, 16, 32
};

// Four stages of two BasicBlocks; MSEII injects the matching edge level at
// the outputs of the stages emitting P3, P4 and P5 (stage 1 keeps the stem
// resolution). Injection both feeds the next stage and the returned pyramid.
template <class T>
struct VisionBackbone {
  std::array<BasicBlock<T>, 8> blocks;  // 4 stages x 2 blocks
  MseiiInject<T> inject3, inject4, inject5;
  std::array<int64_t, 4> widths{};
  bool mseii_enabled = true;

  VisionBackbone() = default;
  VisionBackbone(ParamStore<T>& ps, const std::string& name, int64_t stem_ch,
                 std::array<int64_t, 4> widths_, int64_t mseii_width, bool mseii_on)
      : widths(widths_), mseii_enabled(mseii_on) {
    int64_t cin = stem_ch;
    for (int s = 0; s < 4; ++s) {
      const int64_t stride = s == 0 ? 1 : 2;
      blocks[2 * s] = BasicBlock<T>(ps, name + ".s" + std::to_string(s) + "b0", cin, widths[s], stride);
      blocks[2 * s + 1] = BasicBlock<T>(ps, name + ".s" + std::to_string(s) + "b1", widths[s], widths[s]);
      cin = widths[s];
    }
    inject3 = MseiiInject<T>(ps, name + ".inj3", widths[1], mseii_width);
    inject4 = MseiiInject<T>(ps, name + ".inj4", widths[2], mseii_width);
    inject5 = MseiiInject<T>(ps, name + ".inj5", widths[3], mseii_width);
  }

  // `enhanced` at stem stride; pyramid levels 1..3 align with strides 8/16/32.
  PyramidFeatures<T> forward(const Var<T>& enhanced, const EdgePyramid<T>& pyr) const {
    check_shape(!mseii_enabled || pyr.levels.size() >= 4,
                "backbone: edge pyramid must provide levels for strides 8/16/32");
    Var<T> h = blocks[1].forward(blocks[0].forward(enhanced));
    PyramidFeatures<T> out;
    h = blocks[3].forward(blocks[2].forward(h));
    out.p3 = mseii_enabled ? inject3.forward(h, pyr.levels[1]) : h;
    h = blocks[5].forward(blocks[4].forward(out.p3));
    out.p4 = mseii_enabled ? inject4.forward(h, pyr.levels[2]) : h;
    h = blocks[7].forward(blocks[6].forward(out.p4));
    out.p5 = mseii_enabled ? inject5.forward(h, pyr.levels[3]) : h;
    return out;
  }
};

}  // namespace fusedet::vision
