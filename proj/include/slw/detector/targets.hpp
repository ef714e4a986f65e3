#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "slw/detector/config.hpp"
#include "slw/detector/network.hpp"
#include "slw/eval/iou.hpp"
#include "slw/synthdata/annotation.hpp"

namespace slw {

/// Regression targets and masks for one image.
///
/// Per (cell, box) slots are indexed `cell * B + j` with `cell = row * S + col`.
/// obj and noobj are complementary. Each kept ground-truth box owns exactly one
/// slot; the class term of a cell belongs to the largest box centred in it.
struct TargetGrid {
  struct Slot {
    double x = 0, y = 0, w = 0, h = 0, conf = 0;
    double alpha = 1.0;
    int gt_index = -1;
  };

  int grid = 0;
  int boxes_per_cell = 0;
  int num_classes = 0;
  std::vector<std::uint8_t> obj;
  std::vector<std::uint8_t> noobj;
  std::vector<Slot> slots;
  std::vector<int> cell_class;      // -1 for cells without an object
  std::vector<double> cell_alpha;   // weight of the class term
  std::vector<int> cell_owner;      // gt index owning the class term
  std::vector<double> gt_alpha;     // alpha of every input box, kept or not
  std::size_t dropped = 0;

  std::size_t slot(int row, int col, int j) const {
    return (static_cast<std::size_t>(row) * grid + col) * boxes_per_cell + j;
  }

  /// Mean alpha over the image's boxes; 1 for an image without boxes.
  double mean_alpha() const {
    if (gt_alpha.empty()) return 1.0;
    return std::accumulate(gt_alpha.begin(), gt_alpha.end(), 0.0) / static_cast<double>(gt_alpha.size());
  }
};

/// Grid cell (row, col) holding a normalised centre; centres on the far edge
/// fall in the last cell.
inline std::pair<int, int> cell_of(double cx, double cy, int grid) {
  const int col = std::min(static_cast<int>(std::floor(cx * grid)), grid - 1);
  const int row = std::min(static_cast<int>(std::floor(cy * grid)), grid - 1);
  return {std::max(row, 0), std::max(col, 0)};
}

/// Box predicted by slot j of cell (row, col), as a normalised annotation.
inline Annotation predicted_box(const DetectorOutput& out, int row, int col, int j) {
  const double s = out.grid;
  Annotation a;
  a.cx = (col + out.box(row, col, j, 0)) / s;
  a.cy = (row + out.box(row, col, j, 1)) / s;
  a.w = std::clamp(out.box(row, col, j, 2), 1e-6, 1.0);
  a.h = std::clamp(out.box(row, col, j, 3), 1e-6, 1.0);
  return a;
}

/// Assigns every ground-truth box to the cell containing its centre and to the
/// free predictor slot whose current prediction overlaps it most (ties and the
/// no-prediction case pick the lowest slot). When a cell receives more boxes
/// than it has slots, the largest ones are kept and the rest counted in
/// `dropped`. `alphas`, when given, holds one weight in [0,1] per box.
inline TargetGrid assign_targets(std::span<const Annotation> gts, const DetectorConfig& config,
                                 const DetectorOutput* prediction = nullptr,
                                 std::span<const double> alphas = {}) {
  validate(config);
  if (!alphas.empty() && alphas.size() != gts.size()) throw Error("assign_targets: one alpha per box required");
  const int S = config.grid, B = config.boxes_per_cell;
  TargetGrid t;
  t.grid = S;
  t.boxes_per_cell = B;
  t.num_classes = config.num_classes;
  const auto nslots = static_cast<std::size_t>(S * S * B);
  t.obj.assign(nslots, 0);
  t.noobj.assign(nslots, 1);
  t.slots.assign(nslots, {});
  t.cell_class.assign(static_cast<std::size_t>(S * S), -1);
  t.cell_alpha.assign(static_cast<std::size_t>(S * S), 0.0);
  t.cell_owner.assign(static_cast<std::size_t>(S * S), -1);
  for (std::size_t i = 0; i < gts.size(); ++i) {
    validate(gts[i], config.num_classes);
    const double a = alphas.empty() ? 1.0 : alphas[i];
    if (!(a >= 0.0 && a <= 1.0)) throw Error("assign_targets: alpha outside [0,1]");
    t.gt_alpha.push_back(a);
  }

  std::vector<std::vector<std::size_t>> per_cell(static_cast<std::size_t>(S * S));
  for (std::size_t i = 0; i < gts.size(); ++i) {
    auto [row, col] = cell_of(gts[i].cx, gts[i].cy, S);
    per_cell[static_cast<std::size_t>(row * S + col)].push_back(i);
  }
  for (int cell = 0; cell < S * S; ++cell) {
    auto& members = per_cell[static_cast<std::size_t>(cell)];
    if (members.empty()) continue;
    std::stable_sort(members.begin(), members.end(),
                     [&](std::size_t a, std::size_t b) { return gts[a].area() > gts[b].area(); });
    if (members.size() > static_cast<std::size_t>(B)) {
      t.dropped += members.size() - static_cast<std::size_t>(B);
      members.resize(static_cast<std::size_t>(B));
    }
    const int row = cell / S, col = cell % S;
    std::vector<bool> used(static_cast<std::size_t>(B), false);
    for (std::size_t gi : members) {
      const Annotation& g = gts[gi];
      int best = -1;
      double best_iou = -1.0;
      for (int j = 0; j < B; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double v = prediction ? iou(predicted_box(*prediction, row, col, j), g) : 0.0;
        if (v > best_iou) {
          best_iou = v;
          best = j;
        }
      }
      used[static_cast<std::size_t>(best)] = true;
      const std::size_t s = t.slot(row, col, best);
      t.obj[s] = 1;
      t.noobj[s] = 0;
      auto& slot = t.slots[s];
      slot.x = g.cx * S - col;
      slot.y = g.cy * S - row;
      slot.w = g.w;
      slot.h = g.h;
      slot.conf = (config.conf_target == ConfTarget::Iou && prediction) ? best_iou : 1.0;
      slot.alpha = t.gt_alpha[gi];
      slot.gt_index = static_cast<int>(gi);
    }
    t.cell_class[static_cast<std::size_t>(cell)] = gts[members.front()].class_id;
    t.cell_alpha[static_cast<std::size_t>(cell)] = t.gt_alpha[members.front()];
    t.cell_owner[static_cast<std::size_t>(cell)] = static_cast<int>(members.front());
  }
  return t;
}

}  // namespace slw
