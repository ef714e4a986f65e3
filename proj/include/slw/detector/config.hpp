#pragma once

#include <string>

#include "slw/numerics/tensor.hpp"

namespace slw {

/// Target used for the object-confidence term of responsible boxes.
enum class ConfTarget { One, Iou };

struct DetectorConfig {
  int grid = 4;           // S
  int boxes_per_cell = 2; // B
  int num_classes = 5;    // C
  double lambda_coord = 5.0;
  double lambda_noobj = 0.5;
  int input_size = 64;
  double conf_threshold = 0.1;
  double nms_iou_threshold = 0.45;
  ConfTarget conf_target = ConfTarget::One;

  int channels() const { return boxes_per_cell * 5 + num_classes; }
  int cells() const { return grid * grid; }

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

inline void validate(const DetectorConfig& c) {
  if (c.grid < 1 || c.boxes_per_cell < 1 || c.num_classes < 1) {
    throw Error("detector config: S, B and C must be >= 1");
  }
  if (!(c.lambda_coord > 0.0)) throw Error("detector config: lambda_coord must be > 0");
  if (!(c.lambda_noobj >= 0.0)) throw Error("detector config: lambda_noobj must be >= 0");
  if (!(c.conf_threshold > 0.0 && c.conf_threshold < 1.0)) {
    throw Error("detector config: conf_threshold must be in (0,1)");
  }
  if (!(c.nms_iou_threshold > 0.0 && c.nms_iou_threshold < 1.0)) {
    throw Error("detector config: nms_iou_threshold must be in (0,1)");
  }
  if (c.input_size < 1) throw Error("detector config: input_size must be positive");
}

}  // namespace slw
