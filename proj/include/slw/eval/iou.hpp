#pragma once

#include <algorithm>

#include "slw/synthdata/annotation.hpp"

namespace slw {

/// Intersection over union of two normalised boxes; 0 when disjoint.
inline double iou(const Annotation& a, const Annotation& b) {
  const double ix = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
  const double iy = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  // ordered sum so fused multiply-add cannot make iou(a,b) != iou(b,a)
  const double sa = a.area(), sb = b.area();
  const double uni = std::min(sa, sb) + std::max(sa, sb) - inter;
  return uni > 0.0 ? std::min(1.0, inter / uni) : 0.0;
}

}  // namespace slw
