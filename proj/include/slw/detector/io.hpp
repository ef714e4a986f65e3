#pragma once

#include <cstdint>
#include <filesystem>

#include "slw/detector/network.hpp"
#include "slw/numerics/checkpoint.hpp"

namespace slw {

namespace detail {

inline Tensor<float> seed_tensor(std::uint64_t seed) {
  Tensor<float> t(Shape{4});
  for (std::size_t i = 0; i < 4; ++i) t[i] = static_cast<float>((seed >> (16 * i)) & 0xffff);
  return t;
}

inline std::uint64_t seed_from_tensor(const Tensor<float>& t) {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < 4; ++i) s |= static_cast<std::uint64_t>(t[i]) << (16 * i);
  return s;
}

}  // namespace detail

/// Checkpoint layout: the weights plus `meta.arch` (S, B, C, input_size) and
/// `meta.seed` (init seed as four 16-bit pieces).
inline ParamStore<float> detector_checkpoint(const Detector<float>& d) {
  ParamStore<float> out;
  out.add("meta.arch", Tensor<float>(Shape{4}, {static_cast<float>(d.config.grid),
                                                static_cast<float>(d.config.boxes_per_cell),
                                                static_cast<float>(d.config.num_classes),
                                                static_cast<float>(d.config.input_size)}));
  out.add("meta.seed", detail::seed_tensor(d.seed));
  for (const auto& [name, t] : d.params) out.add(name, t);
  return out;
}

/// Rebuilds a detector from a checkpoint. Loss and threshold settings come from
/// `base`; the architecture fields must match the stored ones.
inline Detector<float> detector_from_checkpoint(const ParamStore<float>& ckpt, const DetectorConfig& base) {
  const auto& arch = ckpt.get("meta.arch");
  if (arch.size() != 4) throw Error("detector checkpoint: bad meta.arch");
  Detector<float> d;
  d.config = base;
  d.config.grid = static_cast<int>(arch[0]);
  d.config.boxes_per_cell = static_cast<int>(arch[1]);
  d.config.num_classes = static_cast<int>(arch[2]);
  d.config.input_size = static_cast<int>(arch[3]);
  d.seed = detail::seed_from_tensor(ckpt.get("meta.seed"));
  const Detector<float> reference = build_detector<float>(d.config, 0);
  for (const auto& [name, t] : reference.params) {
    const auto& stored = ckpt.get(name);
    if (stored.shape() != t.shape()) throw Error("detector checkpoint: shape mismatch for " + name);
    d.params.add(name, stored);
  }
  return d;
}

inline void save_detector(const std::filesystem::path& p, const Detector<float>& d) {
  save_checkpoint(p, detector_checkpoint(d));
}

inline Detector<float> load_detector(const std::filesystem::path& p, const DetectorConfig& base) {
  return detector_from_checkpoint(load_checkpoint(p), base);
}

}  // namespace slw
