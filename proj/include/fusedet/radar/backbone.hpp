#pragma once

#include <vector>

#include "fusedet/radar/smpconv.hpp"
#include "fusedet/vision/blocks.hpp"

namespace fusedet::radar {

// Radar branch: stride-4 conv stem on the 4-channel REVP map followed by
// stride-1 residual blocks. Blocks are SMP continuous-conv blocks by default;
// the smp=off ablation swaps in plain BasicBlocks of the same width.
template <class T>
struct RadarBackbone {
  nn::Conv2d<T> stem1, stem2;
  nn::GroupNorm<T> gn1, gn2;
  std::vector<SMPBlock<T>> smp_blocks;
  std::vector<vision::BasicBlock<T>> basic_blocks;
  bool use_smp = true;
  int64_t out_ch = 0;

  RadarBackbone() = default;
  RadarBackbone(ParamStore<T>& ps, const std::string& name, int64_t out_ch_, int64_t num_blocks,
                bool use_smp_, int64_t smp_points = 9)
      : stem1(ps, name + ".stem1", 4, out_ch_ / 2, 3, 2),
        stem2(ps, name + ".stem2", out_ch_ / 2, out_ch_, 3, 2),
        gn1(ps, name + ".sn1", out_ch_ / 2),
        gn2(ps, name + ".sn2", out_ch_),
        use_smp(use_smp_),
        out_ch(out_ch_) {
    for (int64_t i = 0; i < num_blocks; ++i) {
      if (use_smp)
        smp_blocks.emplace_back(ps, name + ".blk" + std::to_string(i), out_ch, out_ch, smp_points);
      else
        basic_blocks.emplace_back(ps, name + ".blk" + std::to_string(i), out_ch, out_ch);
    }
  }

  // revp: [B,4,H,W] -> [B,out_ch,H/4,W/4], matching the vision stem size.
  Var<T> forward(const Var<T>& revp) const {
    check_shape(revp.dim(1) == 4, "radar backbone expects a 4-channel REVP map");
    Var<T> h = ops::silu(gn1.forward(stem1.forward(revp)));
    h = ops::silu(gn2.forward(stem2.forward(h)));
    if (use_smp)
      for (const auto& b : smp_blocks) h = b.forward(h);
    else
      for (const auto& b : basic_blocks) h = b.forward(h);
    return h;
  }

  void clamp_radii() {
    for (auto& b : smp_blocks) b.clamp_radii();
  }
};

}  // namespace fusedet::radar
