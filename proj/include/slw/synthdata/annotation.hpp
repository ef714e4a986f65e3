#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "slw/numerics/tensor.hpp"

namespace slw {

/// Class-labelled box, centre/size normalised by the image size.
struct Annotation {
  int class_id = 0;
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x0() const { return cx - 0.5 * w; }
  double x1() const { return cx + 0.5 * w; }
  double y0() const { return cy - 0.5 * h; }
  double y1() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

/// Pseudo-label produced by a teacher: the box plus its confidence metric
/// `alpha` and the teacher's own decoded confidence.
struct ScoredAnnotation {
  Annotation box;
  double alpha = 0.0;
  double det_conf = 0.0;

  friend bool operator==(const ScoredAnnotation&, const ScoredAnnotation&) = default;
};

/// Rounds to the 6-decimal grid used by annotation files, so that values
/// survive a write/read cycle unchanged.
inline double quantize6(double v) { return std::round(v * 1e6) / 1e6; }

inline Annotation quantized(Annotation a) {
  a.cx = quantize6(a.cx);
  a.cy = quantize6(a.cy);
  a.w = quantize6(a.w);
  a.h = quantize6(a.h);
  return a;
}

/// Empty string when valid, otherwise the violated invariant.
inline std::string annotation_problem(const Annotation& a, int num_classes) {
  if (a.class_id < 0 || a.class_id >= num_classes) return "class id out of range";
  if (!(a.cx >= 0.0 && a.cx <= 1.0 && a.cy >= 0.0 && a.cy <= 1.0)) return "centre outside [0,1]";
  if (!(a.w > 0.0 && a.w <= 1.0 && a.h > 0.0 && a.h <= 1.0)) return "size outside (0,1]";
  const double ix = std::min(a.x1(), 1.0) - std::max(a.x0(), 0.0);
  const double iy = std::min(a.y1(), 1.0) - std::max(a.y0(), 0.0);
  if (!(ix > 0.0 && iy > 0.0)) return "box does not intersect the image";
  return {};
}

inline bool is_valid(const Annotation& a, int num_classes) {
  return annotation_problem(a, num_classes).empty();
}

inline void validate(const Annotation& a, int num_classes) {
  if (auto p = annotation_problem(a, num_classes); !p.empty()) throw Error("invalid annotation: " + p);
}

}  // namespace slw
