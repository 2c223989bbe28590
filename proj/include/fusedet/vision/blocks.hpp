#pragma once

#include "fusedet/core/nn.hpp"

namespace fusedet::vision {

// Two-conv residual block (ResNet BasicBlock shape, GroupNorm + SiLU).
template <class T>
struct BasicBlock {
  nn::Conv2d<T> conv1, conv2, down;
  nn::GroupNorm<T> gn1, gn2, gnd;
  bool has_down = false;

  BasicBlock() = default;
  BasicBlock(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout,
             int64_t stride = 1)
      : conv1(ps, name + ".c1", cin, cout, 3, stride),
        conv2(ps, name + ".c2", cout, cout, 3, 1),
        gn1(ps, name + ".n1", cout),
        gn2(ps, name + ".n2", cout) {
    if (stride != 1 || cin != cout) {
      down = nn::Conv2d<T>(ps, name + ".down", cin, cout, 1, stride);
      gnd = nn::GroupNorm<T>(ps, name + ".nd", cout);
      has_down = true;
    }
  }

  Var<T> forward(const Var<T>& x) const {
    Var<T> h = ops::silu(gn1.forward(conv1.forward(x)));
    h = gn2.forward(conv2.forward(h));
    Var<T> res = has_down ? gnd.forward(down.forward(x)) : x;
    return ops::silu(ops::add(res, h));
  }
};

}  // namespace fusedet::vision
