#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "slw/numerics/checkpoint.hpp"
#include "slw/numerics/ops.hpp"
#include "slw/numerics/optim.hpp"
#include "slw/numerics/rng.hpp"
#include "slw/synthdata/dataset.hpp"
#include "slw/synthdata/image.hpp"

namespace slw {

/// Base widths of the three conv blocks and the per-member width multipliers.
inline constexpr std::array<std::size_t, 3> kClassifierWidths{8, 16, 32};
inline constexpr std::array<double, 4> kEnsembleWidthScale{1.0, 1.25, 0.75, 1.5};
inline constexpr std::size_t kEnsembleSize = kEnsembleWidthScale.size();

/// Small crop classifier: three conv3x3 -> leaky_relu -> maxpool2 blocks, then
/// a dense layer to C logits.
template <class T>
struct Classifier {
  std::array<std::size_t, 3> widths{};
  int num_classes = 0;
  int crop_size = 0;
  std::uint64_t seed = 0;
  ParamStore<T> params;

  friend bool operator==(const Classifier&, const Classifier&) = default;
};

template <class T = float>
Classifier<T> build_classifier(std::array<std::size_t, 3> widths, int num_classes, int crop_size,
                               std::uint64_t seed) {
  if (crop_size < 8 || crop_size % 8 != 0) throw Error("classifier: crop_size must be a positive multiple of 8");
  if (num_classes < 1) throw Error("classifier: num_classes must be >= 1");
  Classifier<T> c;
  c.widths = widths;
  c.num_classes = num_classes;
  c.crop_size = crop_size;
  c.seed = seed;
  Rng rng(derive_seed(seed, "classifier-init"));
  auto normal = [&](Shape s, std::size_t fan_in, double gain) {
    Tensor<T> t(std::move(s));
    const double sd = gain / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data()) v = static_cast<T>(sd * rng.normal());
    return t;
  };
  std::size_t in = 3;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string p = "conv" + std::to_string(i + 1);
    c.params.add(p + ".w", normal(Shape{widths[i], in, 3, 3}, in * 9, std::sqrt(2.0)));
    c.params.add(p + ".b", Tensor<T>(Shape{widths[i]}));
    in = widths[i];
  }
  const std::size_t side = static_cast<std::size_t>(crop_size) / 8;
  const std::size_t flat = in * side * side;
  c.params.add("fc.w", normal(Shape{static_cast<std::size_t>(num_classes), flat}, flat, 1.0));
  c.params.add("fc.b", Tensor<T>(Shape{static_cast<std::size_t>(num_classes)}));
  return c;
}

namespace detail {

template <class T, class Bind>
Var classifier_logits_impl(Tape<T>& tape, const Classifier<T>& c, Var crop, Bind bind) {
  const auto n = static_cast<std::size_t>(c.crop_size);
  if (tape.value(crop).shape() != Shape{3, n, n}) {
    throw ShapeError("classifier: input is " + shape_string(tape.value(crop).shape()) + ", expected [3," +
                     std::to_string(n) + "," + std::to_string(n) + "]");
  }
  Var x = crop;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string p = "conv" + std::to_string(i + 1);
    x = maxpool2(tape, leaky_relu(tape, conv2d(tape, x, bind(p + ".w"), bind(p + ".b"), 1, 1), T(0.1)));
  }
  x = reshape(tape, x, Shape{tape.value(x).size()});
  return dense(tape, x, bind("fc.w"), bind("fc.b"));
}

}  // namespace detail

template <class T>
Var classifier_logits(Tape<T>& tape, Classifier<T>& c, Var crop) {
  return detail::classifier_logits_impl(tape, c, crop, [&](const std::string& n) { return tape.parameter(c.params.get(n)); });
}

template <class T>
Var classifier_logits(Tape<T>& tape, const Classifier<T>& c, Var crop) {
  return detail::classifier_logits_impl(tape, c, crop,
                                        [&](const std::string& n) { return tape.constant_ref(c.params.get(n)); });
}

/// Class probabilities for a crop of exactly crop_size x crop_size pixels.
template <class T>
std::vector<double> classify(const Classifier<T>& c, const Image& crop) {
  const auto n = static_cast<std::size_t>(c.crop_size);
  if (crop.height != n || crop.width != n) {
    throw Error("classify: crop is " + std::to_string(crop.height) + "x" + std::to_string(crop.width) + ", expected " +
                std::to_string(n) + "x" + std::to_string(n));
  }
  Tape<T> tape;
  Var p = softmax(tape, classifier_logits(tape, c, tape.constant(to_tensor<T>(crop))));
  const auto& v = tape.value(p);
  return std::vector<double>(v.data().begin(), v.data().end());
}

/// Four classifiers with different seeds and widths.
struct ClassifierEnsemble {
  int crop_size = 32;
  int num_classes = 0;
  std::vector<Classifier<float>> members;
  std::vector<double> holdout_accuracy;
};

struct ClassifierTrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  int epochs = 20;
  int batch_size = 16;
  std::uint64_t seed = 0;
  double holdout_fraction = 0.2;
  bool shuffle_labels = false;  // sanity control: train on permuted labels
};

struct LabeledCrop {
  Tensor<float> input;
  int label = 0;
};

/// One crop per gold annotation, resized to crop_size.
inline std::vector<LabeledCrop> gold_crops(const Dataset& gold, int crop_size) {
  if (gold.role != Role::Gold) throw Error("train_classifiers: dataset role must be gold");
  std::vector<LabeledCrop> out;
  for (const auto& it : gold.items) {
    for (const auto& a : it.boxes) {
      out.push_back({to_tensor<float>(crop_resize(it.image, a, static_cast<std::size_t>(crop_size))), a.class_id});
    }
  }
  return out;
}

template <class T>
double classifier_accuracy(const Classifier<T>& c, const std::vector<LabeledCrop>& data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& s : data) {
    Tape<T> tape;
    Var logits = classifier_logits(tape, c, tape.constant_ref(s.input));
    const auto v = tape.value(logits).data();
    const auto best = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    if (best == s.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Cross-entropy training of one classifier on the given crops.
inline void fit_classifier(Classifier<float>& c, const std::vector<LabeledCrop>& train, const ClassifierTrainConfig& cfg,
                           std::uint64_t shuffle_seed) {
  c.params.enable_grad();
  SgdMomentum<float> opt(static_cast<float>(cfg.lr), static_cast<float>(cfg.momentum));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> labels;
  for (const auto& s : train) labels.push_back(s.label);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    // Control run: a fresh permutation every epoch, so no fixed label-image
    // pairing survives long enough to be learned from chance imbalance.
    if (cfg.shuffle_labels) {
      Rng(derive_seed(derive_seed(cfg.seed, "label-shuffle"), static_cast<std::uint64_t>(epoch))).shuffle(labels);
    }
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      c.params.zero_grad();
      for (std::size_t k = start; k < stop; ++k) {
        const auto& s = train[order[k]];
        Tape<float> tape;
        Var loss = cross_entropy(tape, classifier_logits(tape, c, tape.constant_ref(s.input)),
                                 static_cast<std::size_t>(labels[order[k]]));
        tape.backward(loss);
      }
      const float inv = 1.0f / static_cast<float>(stop - start);
      for (auto& e : c.params) {
        for (float& g : e.second.grad()) g *= inv;
      }
      opt.step(c.params);
    }
  }
  for (auto& e : c.params) e.second.disable_grad();
}

/// Trains the four-member ensemble on crops of the gold annotations. A seeded
/// `holdout_fraction` of the crops is kept aside to report accuracy.
inline ClassifierEnsemble train_classifiers(const Dataset& gold, int crop_size, const ClassifierTrainConfig& cfg) {
  auto crops = gold_crops(gold, crop_size);
  const int nc = gold.num_classes();
  std::vector<std::size_t> per_class(static_cast<std::size_t>(nc), 0);
  for (const auto& s : crops) ++per_class[static_cast<std::size_t>(s.label)];
  for (int c = 0; c < nc; ++c) {
    if (per_class[static_cast<std::size_t>(c)] == 0) {
      throw Error("train_classifiers: class '" + gold.class_names[static_cast<std::size_t>(c)] + "' has no crops");
    }
  }
  Rng split_rng(derive_seed(cfg.seed, "holdout"));
  split_rng.shuffle(crops);
  const auto n_hold = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(crops.size())));
  std::vector<LabeledCrop> holdout(std::make_move_iterator(crops.end() - static_cast<std::ptrdiff_t>(n_hold)),
                                   std::make_move_iterator(crops.end()));
  crops.resize(crops.size() - n_hold);
  if (crops.empty()) throw Error("train_classifiers: no training crops left after holdout");

  ClassifierEnsemble ens;
  ens.crop_size = crop_size;
  ens.num_classes = nc;
  for (std::size_t k = 0; k < kEnsembleSize; ++k) {
    std::array<std::size_t, 3> widths{};
    for (std::size_t i = 0; i < 3; ++i) {
      widths[i] = static_cast<std::size_t>(std::lround(static_cast<double>(kClassifierWidths[i]) * kEnsembleWidthScale[k]));
    }
    const std::uint64_t member_seed = derive_seed(cfg.seed, "classifier-" + std::to_string(k));
    auto clf = build_classifier<float>(widths, nc, crop_size, member_seed);
    fit_classifier(clf, crops, cfg, derive_seed(member_seed, "shuffle"));
    ens.holdout_accuracy.push_back(classifier_accuracy(clf, holdout));
    ens.members.push_back(std::move(clf));
  }
  return ens;
}

// Checkpoint layout: clf<k>.<param> for each member plus meta.ensemble
// (crop_size, num_classes) and meta.clf<k>.widths.
inline ParamStore<float> ensemble_checkpoint(const ClassifierEnsemble& ens) {
  ParamStore<float> out;
  out.add("meta.ensemble", Tensor<float>(Shape{2}, {static_cast<float>(ens.crop_size), static_cast<float>(ens.num_classes)}));
  for (std::size_t k = 0; k < ens.members.size(); ++k) {
    const auto& m = ens.members[k];
    const std::string p = "clf" + std::to_string(k) + ".";
    out.add("meta." + p + "widths", Tensor<float>(Shape{3}, {static_cast<float>(m.widths[0]), static_cast<float>(m.widths[1]),
                                                             static_cast<float>(m.widths[2])}));
    for (const auto& [name, t] : m.params) out.add(p + name, t);
  }
  return out;
}

inline ClassifierEnsemble ensemble_from_checkpoint(const ParamStore<float>& ckpt) {
  const auto& meta = ckpt.get("meta.ensemble");
  ClassifierEnsemble ens;
  ens.crop_size = static_cast<int>(meta[0]);
  ens.num_classes = static_cast<int>(meta[1]);
  for (std::size_t k = 0;; ++k) {
    const std::string p = "clf" + std::to_string(k) + ".";
    const auto* w = ckpt.find("meta." + p + "widths");
    if (!w) break;
    std::array<std::size_t, 3> widths{static_cast<std::size_t>((*w)[0]), static_cast<std::size_t>((*w)[1]),
                                      static_cast<std::size_t>((*w)[2])};
    auto clf = build_classifier<float>(widths, ens.num_classes, ens.crop_size, 0);
    for (auto& [name, t] : clf.params) {
      const auto& stored = ckpt.get(p + name);
      if (stored.shape() != t.shape()) throw Error("ensemble checkpoint: shape mismatch for " + p + name);
      t = stored;
    }
    ens.members.push_back(std::move(clf));
  }
  if (ens.members.empty()) throw Error("ensemble checkpoint: no classifiers");
  return ens;
}

}  // namespace slw
