#pragma once

#include <cmath>
#include <string>

#include "slw/detector/config.hpp"
#include "slw/detector/targets.hpp"
#include "slw/numerics/ops.hpp"

namespace slw {

/// How the background (no-object) term is weighted when alphas are applied.
enum class NoobjAlpha { Mean, One };

struct LossBreakdown {
  double centre = 0, box = 0, object = 0, noobj = 0, score = 0, total = 0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    centre += o.centre;
    box += o.box;
    object += o.object;
    noobj += o.noobj;
    score += o.score;
    total += o.total;
    return *this;
  }
  LossBreakdown scaled(double f) const {
    return {centre * f, box * f, object * f, noobj * f, score * f, total * f};
  }
  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

/// Tape handles of the five loss terms and their sum.
struct LossTerms {
  Var centre, box, object, noobj, score, total;

  template <class T>
  LossBreakdown values(const Tape<T>& tape) const {
    auto v = [&](Var x) { return static_cast<double>(tape.value(x)[0]); };
    return {v(centre), v(box), v(object), v(noobj), v(score), v(total)};
  }
};

struct LossWeighting {
  bool use_alpha = false;
  NoobjAlpha noobj = NoobjAlpha::Mean;
};

/// Records the five-term grid loss on the activated channel-major grid.
///
/// Each term is a masked sum of squared errors; the masks carry lambda_coord,
/// lambda_noobj and, when `weighting.use_alpha` is set, the per-box alpha:
///   centre = sum_obj  lc*a*[(x-x^)^2 + (y-y^)^2]
///   box    = sum_obj  lc*a*[(sqrt w - sqrt w^)^2 + (sqrt h - sqrt h^)^2]
///   object = sum_obj  a*(C - C^)^2
///   noobj  = sum_noobj ln*a_bg*C^2      (a_bg = image mean alpha, or 1)
///   score  = sum_cells a_cell*sum_c (p(c) - p^(c))^2
/// Without alpha weighting every a is 1, which gives the plain loss exactly.
template <class T>
LossTerms detection_loss(Tape<T>& tape, Var grid, const TargetGrid& targets, const DetectorConfig& config,
                         LossWeighting weighting = {}) {
  const int S = config.grid, B = config.boxes_per_cell, C = config.num_classes, K = config.channels();
  const Shape shape{static_cast<std::size_t>(K), static_cast<std::size_t>(S), static_cast<std::size_t>(S)};
  const auto& g = tape.value(grid);
  if (g.shape() != shape) {
    throw ShapeError("detection_loss: grid shape " + shape_string(g.shape()) + " does not match config " +
                     shape_string(shape));
  }
  if (targets.grid != S || targets.boxes_per_cell != B || targets.num_classes != C) {
    throw ShapeError("detection_loss: target grid does not match config");
  }
  const std::size_t cells = static_cast<std::size_t>(S * S);
  auto idx = [&](int ch, std::size_t cell) { return static_cast<std::size_t>(ch) * cells + cell; };

  Tensor<T> target(shape), sqrt_target(shape);
  Tensor<T> w_centre(shape), w_box(shape), w_object(shape), w_noobj(shape), w_score(shape);
  const double bg_alpha =
      (weighting.use_alpha && weighting.noobj == NoobjAlpha::Mean) ? targets.mean_alpha() : 1.0;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (int j = 0; j < B; ++j) {
      const std::size_t s = cell * static_cast<std::size_t>(B) + static_cast<std::size_t>(j);
      const int base = j * 5;
      if (targets.obj[s]) {
        const auto& slot = targets.slots[s];
        const double a = weighting.use_alpha ? slot.alpha : 1.0;
        if (!(a >= 0.0 && a <= 1.0)) throw Error("detection_loss: alpha outside [0,1]");
        target[idx(base + 0, cell)] = static_cast<T>(slot.x);
        target[idx(base + 1, cell)] = static_cast<T>(slot.y);
        sqrt_target[idx(base + 2, cell)] = static_cast<T>(std::sqrt(slot.w));
        sqrt_target[idx(base + 3, cell)] = static_cast<T>(std::sqrt(slot.h));
        target[idx(base + 4, cell)] = static_cast<T>(slot.conf);
        const T wc = static_cast<T>(config.lambda_coord * a);
        w_centre[idx(base + 0, cell)] = wc;
        w_centre[idx(base + 1, cell)] = wc;
        w_box[idx(base + 2, cell)] = wc;
        w_box[idx(base + 3, cell)] = wc;
        w_object[idx(base + 4, cell)] = static_cast<T>(a);
      } else if (targets.noobj[s]) {
        w_noobj[idx(base + 4, cell)] = static_cast<T>(config.lambda_noobj * bg_alpha);
      }
    }
    const int cls = targets.cell_class[cell];
    if (cls >= 0) {
      const double a = weighting.use_alpha ? targets.cell_alpha[cell] : 1.0;
      for (int c = 0; c < C; ++c) {
        target[idx(B * 5 + c, cell)] = c == cls ? T{1} : T{0};
        w_score[idx(B * 5 + c, cell)] = static_cast<T>(a);
      }
    }
  }

  Var t_var = tape.constant(std::move(target));
  Var sq = square(tape, sub(tape, grid, t_var));
  Var sq_root = square(tape, sub(tape, sqrt(tape, grid), tape.constant(std::move(sqrt_target))));
  LossTerms out;
  out.centre = sum(tape, mul(tape, sq, tape.constant(std::move(w_centre))));
  out.box = sum(tape, mul(tape, sq_root, tape.constant(std::move(w_box))));
  out.object = sum(tape, mul(tape, sq, tape.constant(std::move(w_object))));
  out.noobj = sum(tape, mul(tape, sq, tape.constant(std::move(w_noobj))));
  out.score = sum(tape, mul(tape, sq, tape.constant(std::move(w_score))));
  out.total = add(tape, add(tape, add(tape, add(tape, out.centre, out.box), out.object), out.noobj), out.score);
  return out;
}

/// Unweighted five-term loss.
template <class T>
LossTerms yolo_loss(Tape<T>& tape, Var grid, const TargetGrid& targets, const DetectorConfig& config) {
  return detection_loss(tape, grid, targets, config, LossWeighting{false, NoobjAlpha::Mean});
}

/// Alpha-weighted loss: sum_i alpha_i * sum_j L_j(box i) plus the background
/// term scaled per `noobj`. Every responsible box must carry alpha in [0,1].
template <class T>
LossTerms weighted_loss(Tape<T>& tape, Var grid, const TargetGrid& targets, const DetectorConfig& config,
                        NoobjAlpha noobj = NoobjAlpha::Mean) {
  return detection_loss(tape, grid, targets, config, LossWeighting{true, noobj});
}

}  // namespace slw
