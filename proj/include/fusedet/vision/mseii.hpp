#pragma once

#include "fusedet/core/nn.hpp"

namespace fusedet::vision {

// Edge-injection block: a learnable conv combines the stage features with
// the matching edge-pyramid level, 3x3 refinement follows, a 1x1 conv maps
// back to the stage width, and the result is added to the stage output so
// no information is lost when the branch contributes nothing.
template <class T>
struct MseiiInject {
  nn::Conv2d<T> combine, refine, reduce;
  int64_t stage_ch = 0;

  MseiiInject() = default;
  MseiiInject(ParamStore<T>& ps, const std::string& name, int64_t stage_ch_, int64_t width)
      : combine(ps, name + ".combine", stage_ch_ + 1, width, 3),
        refine(ps, name + ".refine", width, width, 3),
        reduce(ps, name + ".reduce", width, stage_ch_, 1),
        stage_ch(stage_ch_) {}

  Var<T> forward(const Var<T>& stage_out, const Var<T>& edge) const {
    check_shape(stage_out.dim(1) == stage_ch, "mseii: stage channels");
    Var<T> e = edge;
    if (edge.dim(2) != stage_out.dim(2) || edge.dim(3) != stage_out.dim(3))
      e = ops::nearest_resize(edge, stage_out.dim(2), stage_out.dim(3));
    check_shape(e.dim(2) == stage_out.dim(2) && e.dim(3) == stage_out.dim(3),
                "mseii: edge/stage spatial mismatch after alignment");
    Var<T> h = ops::silu(combine.forward(ops::concat_ch<T>({stage_out, e})));
    h = ops::silu(refine.forward(h));
    return ops::add(stage_out, reduce.forward(h));
  }
};

}  // namespace fusedet::vision
