#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "slw/detector/config.hpp"
#include "slw/numerics/checkpoint.hpp"
#include "slw/numerics/ops.hpp"
#include "slw/numerics/rng.hpp"
#include "slw/synthdata/image.hpp"

namespace slw {

/// Backbone widths: four conv3x3 -> leaky_relu -> maxpool2 blocks.
inline constexpr std::array<std::size_t, 4> kBackboneWidths{16, 32, 64, 64};

/// Weights (theta) of the grid detector plus the config they were built for.
template <class T>
struct Detector {
  DetectorConfig config;
  ParamStore<T> params;
  std::uint64_t seed = 0;

  template <class U>
  Detector<U> cast() const {
    return Detector<U>{config, params.template cast<U>(), seed};
  }

  friend bool operator==(const Detector&, const Detector&) = default;
};

namespace detail {

template <class T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, double gain, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double sd = gain * std::sqrt(1.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(sd * rng.normal());
  return t;
}

}  // namespace detail

/// Closed-form parameter count of the detector architecture.
inline std::size_t detector_parameter_count(const DetectorConfig& c) {
  std::size_t n = 0, in = 3;
  for (std::size_t w : kBackboneWidths) {
    n += w * in * 9 + w;
    in = w;
  }
  const auto k = static_cast<std::size_t>(c.channels());
  return n + k * in + k;
}

template <class T = float>
Detector<T> build_detector(const DetectorConfig& config, std::uint64_t seed) {
  validate(config);
  const int reduce = 1 << kBackboneWidths.size();
  if (config.input_size % reduce != 0 || config.input_size / reduce != config.grid) {
    throw Error("build_detector: input_size " + std::to_string(config.input_size) +
                " yields a " + std::to_string(config.input_size / reduce) + "x" +
                std::to_string(config.input_size / reduce) + " feature map, expected S=" +
                std::to_string(config.grid));
  }
  Rng rng(derive_seed(seed, "detector-init"));
  Detector<T> d;
  d.config = config;
  d.seed = seed;
  std::size_t in = 3;
  for (std::size_t i = 0; i < kBackboneWidths.size(); ++i) {
    const std::size_t w = kBackboneWidths[i];
    const std::string p = "conv" + std::to_string(i + 1);
    d.params.add(p + ".w", detail::he_normal<T>(Shape{w, in, 3, 3}, in * 9, std::sqrt(2.0), rng));
    d.params.add(p + ".b", Tensor<T>(Shape{w}));
    in = w;
  }
  const auto k = static_cast<std::size_t>(config.channels());
  d.params.add("head.w", detail::he_normal<T>(Shape{k, in, 1, 1}, in, 1.0, rng));
  d.params.add("head.b", Tensor<T>(Shape{k}));
  return d;
}

/// Output activations on a raw head tensor [B*5+C, S, S]: sigmoid on the box
/// channels, softmax over the class channels of each cell.
template <class T>
Var activate_head(Tape<T>& tape, Var raw, const DetectorConfig& config) {
  const auto box_ch = static_cast<std::size_t>(config.boxes_per_cell * 5);
  const auto all_ch = static_cast<std::size_t>(config.channels());
  Var boxes = sigmoid(tape, slice(tape, raw, 0, box_ch));
  Var classes = softmax(tape, slice(tape, raw, box_ch, all_ch));
  return concat(tape, {boxes, classes});
}

namespace detail {

template <class T, class Bind>
Var detector_forward_impl(Tape<T>& tape, const DetectorConfig& config, Var image, Bind bind) {
  Var x = image;
  for (std::size_t i = 0; i < kBackboneWidths.size(); ++i) {
    const std::string p = "conv" + std::to_string(i + 1);
    x = conv2d(tape, x, bind(p + ".w"), bind(p + ".b"), 1, 1);
    x = leaky_relu(tape, x, T(0.1));
    x = maxpool2(tape, x);
  }
  return activate_head(tape, conv2d(tape, x, bind("head.w"), bind("head.b"), 1, 0), config);
}

}  // namespace detail

/// Records the forward pass. Returns the activated grid in channel-major
/// layout [B*5+C, S, S]: sigmoid on every box channel, softmax over the class
/// channels of each cell. Parameters with grad enabled receive gradients.
template <class T>
Var detector_forward(Tape<T>& tape, Detector<T>& d, Var image) {
  return detail::detector_forward_impl(tape, d.config, image,
                                       [&](const std::string& n) { return tape.parameter(d.params.get(n)); });
}

/// Forward pass with the weights held constant.
template <class T>
Var detector_forward(Tape<T>& tape, const Detector<T>& d, Var image) {
  return detail::detector_forward_impl(tape, d.config, image,
                                       [&](const std::string& n) { return tape.constant_ref(d.params.get(n)); });
}

/// Activated prediction grid viewed as [S, S, B*5+C].
struct DetectorOutput {
  int grid = 0;
  int boxes_per_cell = 0;
  int num_classes = 0;
  Tensor<double> values;  // [S, S, B*5+C]

  int channels() const { return boxes_per_cell * 5 + num_classes; }
  double at(int row, int col, int ch) const {
    return values[(static_cast<std::size_t>(row) * grid + col) * channels() + ch];
  }
  double& at(int row, int col, int ch) {
    return values[(static_cast<std::size_t>(row) * grid + col) * channels() + ch];
  }
  // field: 0 tx, 1 ty, 2 tw, 3 th, 4 conf
  double box(int row, int col, int j, int field) const { return at(row, col, j * 5 + field); }
  double class_prob(int row, int col, int c) const { return at(row, col, boxes_per_cell * 5 + c); }

  static DetectorOutput zeros(const DetectorConfig& c) {
    DetectorOutput o{c.grid, c.boxes_per_cell, c.num_classes,
                     Tensor<double>(Shape{static_cast<std::size_t>(c.grid), static_cast<std::size_t>(c.grid),
                                          static_cast<std::size_t>(c.channels())})};
    return o;
  }

  /// From the channel-major tensor produced by detector_forward.
  template <class T>
  static DetectorOutput from_channel_major(const Tensor<T>& g, const DetectorConfig& c) {
    DetectorOutput o = zeros(c);
    const int cells = c.cells();
    for (int ch = 0; ch < c.channels(); ++ch) {
      for (int cell = 0; cell < cells; ++cell) {
        o.values[static_cast<std::size_t>(cell) * c.channels() + ch] =
            static_cast<double>(g[static_cast<std::size_t>(ch) * cells + cell]);
      }
    }
    return o;
  }
};

/// Inference without gradient tracking.
template <class T>
DetectorOutput predict(const Detector<T>& d, const Tensor<T>& image) {
  Tape<T> tape;
  Var g = detector_forward(tape, d, tape.constant_ref(image));
  return DetectorOutput::from_channel_major(tape.value(g), d.config);
}

}  // namespace slw
