#pragma once

#include "fusedet/core/ops.hpp"

namespace fusedet::det {

// Differentiable GIoU between predicted boxes [M,4] (cxcywh, Var) and target
// boxes [M,4] (constant), composed from elementwise autograd primitives so
// its gradients are covered by the finite-difference op suite. Returns a
// [M,1] column of GIoU values.
template <class T>
Var<T> giou_column(const Var<T>& pred_cxcywh, const Tensor<T>& target_cxcywh) {
  using namespace ops;
  check_shape(pred_cxcywh.dim(1) == 4 && target_cxcywh.dim(1) == 4, "giou_column: [M,4] boxes");
  const Var<T> t = Var<T>::constant(target_cxcywh);

  auto corners = [](const Var<T>& b) {
    Var<T> cx = slice_cols(b, 0, 1), cy = slice_cols(b, 1, 2);
    Var<T> w = slice_cols(b, 2, 3), h = slice_cols(b, 3, 4);
    Var<T> hw = scale(w, T(0.5)), hh = scale(h, T(0.5));
    struct C {
      Var<T> x1, y1, x2, y2, area;
    };
    return C{sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh), mul(w, h)};
  };
  auto A = corners(pred_cxcywh);
  auto B = corners(t);

  Var<T> iw = clamp_min(sub(emin(A.x2, B.x2), emax(A.x1, B.x1)), T(0));
  Var<T> ih = clamp_min(sub(emin(A.y2, B.y2), emax(A.y1, B.y1)), T(0));
  Var<T> inter = mul(iw, ih);
  Var<T> uni = sub(add(A.area, B.area), inter);
  Var<T> iou = div(inter, uni);

  Var<T> ew = sub(emax(A.x2, B.x2), emin(A.x1, B.x1));
  Var<T> eh = sub(emax(A.y2, B.y2), emin(A.y1, B.y1));
  Var<T> enc = mul(ew, eh);
  return sub(iou, div(sub(enc, uni), enc));
}

}  // namespace fusedet::det
