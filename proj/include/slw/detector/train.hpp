#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "slw/detector/loss.hpp"
#include "slw/detector/network.hpp"
#include "slw/detector/targets.hpp"
#include "slw/numerics/optim.hpp"
#include "slw/numerics/rng.hpp"
#include "slw/synthdata/dataset.hpp"
#include "slw/util/csv.hpp"

namespace slw {

struct DetectorTrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  int epochs = 15;
  int batch_size = 8;
  std::uint64_t seed = 0;
  bool alpha_weighting = false;
  NoobjAlpha noobj_alpha = NoobjAlpha::Mean;
  double grad_clip = 5.0;  // global-norm clip on the batch gradient; 0 disables
  bool cosine_decay = false;  // lr follows a half cosine from lr to 0 over all steps
};

/// Learning rate for optimiser step `step` of `total`.
inline double scheduled_lr(const DetectorTrainConfig& cfg, std::size_t step, std::size_t total) {
  if (!cfg.cosine_decay || total == 0) return cfg.lr;
  constexpr double pi = 3.14159265358979323846;
  return cfg.lr * 0.5 * (1.0 + std::cos(pi * static_cast<double>(step) / static_cast<double>(total)));
}

template <class T>
struct DetectorTrainResult {
  Detector<T> model;
  std::vector<LossBreakdown> history;  // per-epoch mean over images
};

namespace detail {

struct TrainSample {
  const Image* image;
  std::vector<Annotation> boxes;
  std::vector<double> alphas;
};

inline std::vector<TrainSample> training_samples(const Dataset& data) {
  if (data.role != Role::Gold && data.role != Role::Silver) {
    throw Error("train_detector: dataset role must be gold or silver, got " + std::string(role_name(data.role)));
  }
  std::vector<TrainSample> out;
  for (const auto& it : data.items) {
    TrainSample s{&it.image, {}, {}};
    if (data.role == Role::Gold) {
      s.boxes = it.boxes;
      s.alphas.assign(it.boxes.size(), 1.0);
    } else {
      for (const auto& sc : it.scored) {
        s.boxes.push_back(sc.box);
        s.alphas.push_back(sc.alpha);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

/// Per-image loss and gradient accumulation into the detector's grad buffers.
template <class T>
LossBreakdown accumulate_gradient(Detector<T>& d, const Tensor<T>& image, std::span<const Annotation> boxes,
                                  std::span<const double> alphas, const LossWeighting& weighting) {
  Tape<T> tape;
  Var grid = detector_forward(tape, d, tape.constant_ref(image));
  const DetectorOutput pred = DetectorOutput::from_channel_major(tape.value(grid), d.config);
  const TargetGrid targets = assign_targets(boxes, d.config, &pred, alphas);
  const LossTerms terms = detection_loss(tape, grid, targets, d.config, weighting);
  tape.backward(terms.total);
  return terms.values(tape);
}

/// Mini-batch momentum SGD over the grid loss. Shuffling is fixed per epoch by
/// `cfg.seed`; with `alpha_weighting` each box's terms are scaled by its alpha.
template <class T>
DetectorTrainResult<T> train_detector(Detector<T> model, const Dataset& data, const DetectorTrainConfig& cfg) {
  auto samples = detail::training_samples(data);
  if (samples.empty()) throw Error("train_detector: empty dataset");
  if (cfg.epochs < 0 || cfg.batch_size < 1) throw Error("train_detector: epochs >= 0 and batch_size >= 1 required");
  std::vector<Tensor<T>> inputs;
  inputs.reserve(samples.size());
  for (const auto& s : samples) inputs.push_back(to_tensor<T>(*s.image));

  const LossWeighting weighting{cfg.alpha_weighting, cfg.noobj_alpha};
  model.params.enable_grad();
  SgdMomentum<T> opt(static_cast<T>(cfg.lr), static_cast<T>(cfg.momentum));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  const std::size_t batches = (order.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                              static_cast<std::size_t>(cfg.batch_size);
  const std::size_t total_steps = batches * static_cast<std::size_t>(cfg.epochs);
  std::size_t step = 0;
  DetectorTrainResult<T> result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(derive_seed(cfg.seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    LossBreakdown epoch_sum;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      model.params.zero_grad();
      for (std::size_t k = start; k < stop; ++k) {
        const auto& s = samples[order[k]];
        epoch_sum += accumulate_gradient(model, inputs[order[k]], s.boxes, s.alphas, weighting);
      }
      const T inv = T{1} / static_cast<T>(stop - start);
      double norm2 = 0.0;
      for (auto& e : model.params) {
        for (T& g : e.second.grad()) {
          g *= inv;
          norm2 += static_cast<double>(g) * static_cast<double>(g);
        }
      }
      if (cfg.grad_clip > 0.0 && std::sqrt(norm2) > cfg.grad_clip) {
        const T f = static_cast<T>(cfg.grad_clip / std::sqrt(norm2));
        for (auto& e : model.params) {
          for (T& g : e.second.grad()) g *= f;
        }
      }
      opt.set_lr(static_cast<T>(scheduled_lr(cfg, step++, total_steps)));
      opt.step(model.params);
    }
    result.history.push_back(epoch_sum.scaled(1.0 / static_cast<double>(samples.size())));
  }
  for (auto& e : model.params) e.second.disable_grad();
  result.model = std::move(model);
  return result;
}

inline std::string loss_history_csv(const std::vector<LossBreakdown>& history) {
  std::string out = "epoch,centre,box,object,noobj,score,total\n";
  char buf[256];
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", i, h.centre, h.box, h.object, h.noobj,
                  h.score, h.total);
    out += buf;
  }
  return out;
}

inline std::vector<LossBreakdown> parse_loss_history_csv(const std::string& text) {
  std::vector<LossBreakdown> out;
  const auto rows = csv::rows(text, "epoch,centre,box,object,noobj,score,total", 7);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (csv::to_int<std::size_t>(f[0], i + 2) != i) throw Error(csv::where(i + 2) + "epochs out of order");
    out.push_back({csv::to_double(f[1], i + 2), csv::to_double(f[2], i + 2), csv::to_double(f[3], i + 2),
                   csv::to_double(f[4], i + 2), csv::to_double(f[5], i + 2), csv::to_double(f[6], i + 2)});
  }
  return out;
}

}  // namespace slw
