#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace fusedet::det {

// Boxes are normalized (cx, cy, w, h) unless a name says xyxy.

using Box = std::array<double, 4>;

inline Box cxcywh_to_xyxy(const Box& b) {
  return {b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2};
}

inline double box_area_xyxy(const Box& b) {
  return std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]);
}

inline double iou_xyxy(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  const double iy = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  const double inter = ix * iy;
  const double uni = box_area_xyxy(a) + box_area_xyxy(b) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// GIoU = IoU - (area(enclosing) - area(union)) / area(enclosing), in (-1, 1].
// Degenerate zero-area unions give IoU 0 with the enclosing term per formula.
inline double giou_xyxy(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  const double iy = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  const double inter = ix * iy;
  const double uni = box_area_xyxy(a) + box_area_xyxy(b) - inter;
  const double iou = uni > 0 ? inter / uni : 0.0;
  const double ex = std::max(a[2], b[2]) - std::min(a[0], b[0]);
  const double ey = std::max(a[3], b[3]) - std::min(a[1], b[1]);
  const double enc = ex * ey;
  if (enc <= 0) return iou;
  return iou - (enc - uni) / enc;
}

inline double giou(const Box& a_cxcywh, const Box& b_cxcywh) {
  return giou_xyxy(cxcywh_to_xyxy(a_cxcywh), cxcywh_to_xyxy(b_cxcywh));
}

inline double iou(const Box& a_cxcywh, const Box& b_cxcywh) {
  return iou_xyxy(cxcywh_to_xyxy(a_cxcywh), cxcywh_to_xyxy(b_cxcywh));
}

inline double l1_distance(const Box& a, const Box& b) {
  double s = 0;
  for (int i = 0; i < 4; ++i) s += std::abs(a[i] - b[i]);
  return s;
}

}  // namespace fusedet::det
