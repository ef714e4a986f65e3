#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "slw/detector/config.hpp"
#include "slw/detector/network.hpp"
#include "slw/detector/targets.hpp"
#include "slw/eval/iou.hpp"

namespace slw {

struct Detection {
  Annotation box;
  double confidence = 0.0;  // C^ * max_c p^(c)
  double class_prob = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Every (cell, slot) whose confidence reaches `conf_threshold`, in grid order.
inline std::vector<Detection> decode(const DetectorOutput& out, double conf_threshold) {
  std::vector<Detection> dets;
  for (int row = 0; row < out.grid; ++row) {
    for (int col = 0; col < out.grid; ++col) {
      int best_c = 0;
      for (int c = 1; c < out.num_classes; ++c) {
        if (out.class_prob(row, col, c) > out.class_prob(row, col, best_c)) best_c = c;
      }
      const double p = out.class_prob(row, col, best_c);
      for (int j = 0; j < out.boxes_per_cell; ++j) {
        const double conf = std::clamp(out.box(row, col, j, 4) * p, 0.0, 1.0);
        if (conf < conf_threshold) continue;
        Detection d;
        d.box = predicted_box(out, row, col, j);
        d.box.cx = std::clamp(d.box.cx, 0.0, 1.0);
        d.box.cy = std::clamp(d.box.cy, 0.0, 1.0);
        d.box.class_id = best_c;
        d.confidence = conf;
        d.class_prob = p;
        dets.push_back(d);
      }
    }
  }
  return dets;
}

inline std::vector<Detection> decode(const DetectorOutput& out, const DetectorConfig& config) {
  return decode(out, config.conf_threshold);
}

/// Classwise greedy non-maximum suppression. Highest confidence first (ties keep
/// input order); a box survives iff its IoU with every kept box of the same
/// class is below `iou_threshold`. Output is sorted by confidence, descending.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
  std::vector<Detection> kept;
  for (std::size_t i : order) {
    const Detection& d = dets[i];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.box.class_id == d.box.class_id && iou(k.box, d.box) >= iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

/// Decode followed by NMS with the thresholds from `config`.
inline std::vector<Detection> detect(const DetectorOutput& out, const DetectorConfig& config) {
  return nms(decode(out, config.conf_threshold), config.nms_iou_threshold);
}

}  // namespace slw
