#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "slw/numerics/rng.hpp"
#include "slw/synthdata/annotation.hpp"
#include "slw/synthdata/image.hpp"

namespace slw {

enum class ShapeKind : int { Disk = 0, Square = 1, Triangle = 2, Ring = 3, Cross = 4 };

inline constexpr std::array<const char*, 5> kShapeNames{"disk", "square", "triangle", "ring", "cross"};

/// Parameters of the synthetic scene generator.
struct SceneSpec {
  int image_size = 64;
  int num_classes = 5;
  int min_objects = 1;
  int max_objects = 3;
  double min_size = 0.18;  // box side, fraction of the image
  double max_size = 0.40;
  double aspect_jitter = 0.25;  // side ratio drawn from [1-j, 1+j]
  double color_jitter = 0.12;
  double texture_noise = 0.04;
  double background_noise = 0.06;
  double max_overlap_iou = 0.1;

  std::vector<std::string> class_names() const {
    return {kShapeNames.begin(), kShapeNames.begin() + num_classes};
  }
};

inline void validate(const SceneSpec& s) {
  if (s.image_size < 8) throw Error("scene: image_size must be >= 8");
  if (s.num_classes < 1 || s.num_classes > 5) throw Error("scene: num_classes must be in [1,5]");
  if (s.min_objects < 1 || s.max_objects > 4 || s.min_objects > s.max_objects) {
    throw Error("scene: objects per image must satisfy 1 <= min <= max <= 4");
  }
  if (!(s.min_size > 0.0 && s.min_size <= s.max_size && s.max_size <= 1.0)) {
    throw Error("scene: size range must satisfy 0 < min <= max <= 1");
  }
  if (!(s.aspect_jitter >= 0.0 && s.aspect_jitter < 1.0)) throw Error("scene: aspect_jitter in [0,1)");
  if (s.color_jitter < 0 || s.texture_noise < 0 || s.background_noise < 0) {
    throw Error("scene: jitter and noise levels must be non-negative");
  }
  if (!(s.max_overlap_iou >= 0.0 && s.max_overlap_iou <= 0.1)) {
    throw Error("scene: max_overlap_iou must be in [0, 0.1]");
  }
}

/// One object on the pixel grid: occupies columns [x0, x0+w) and rows [y0, y0+h).
struct PlacedShape {
  ShapeKind kind = ShapeKind::Disk;
  int x0 = 0;
  int y0 = 0;
  int w = 1;
  int h = 1;
  std::array<double, 3> color{1.0, 1.0, 1.0};

  Annotation annotation(int image_size) const {
    const double s = image_size;
    return quantized(Annotation{static_cast<int>(kind), (x0 + 0.5 * w) / s, (y0 + 0.5 * h) / s,
                                w / s, h / s});
  }
};

/// Whether the pixel centre (px + 0.5, py + 0.5) lies inside the shape.
/// Every shape touches all four edges of its pixel box.
inline bool shape_contains(const PlacedShape& s, int px, int py) {
  if (px < s.x0 || px >= s.x0 + s.w || py < s.y0 || py >= s.y0 + s.h) return false;
  const double rx = 0.5 * s.w, ry = 0.5 * s.h;
  const double u = (px + 0.5 - (s.x0 + rx)) / rx;
  const double v = (py + 0.5 - (s.y0 + ry)) / ry;
  // One pixel of slack so the extreme rows/columns are never empty.
  const double su = 1.0 / rx, sv = 1.0 / ry;
  const double r2 = u * u + v * v;
  switch (s.kind) {
    case ShapeKind::Disk:
      return r2 <= 1.0 + su + sv;
    case ShapeKind::Square:
      return true;
    case ShapeKind::Triangle:
      return std::abs(u) <= 0.5 * (v + 1.0) + su;
    case ShapeKind::Ring:
      return r2 <= 1.0 + su + sv && r2 >= 0.3;
    case ShapeKind::Cross:
      return std::abs(u) <= 0.3 + su || std::abs(v) <= 0.3 + sv;
  }
  return false;
}

/// Pixel mask of one shape, row-major [size, size].
inline std::vector<std::uint8_t> shape_mask(const PlacedShape& s, int image_size) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(image_size) * image_size, 0);
  for (int y = 0; y < image_size; ++y) {
    for (int x = 0; x < image_size; ++x) {
      m[static_cast<std::size_t>(y) * image_size + x] = shape_contains(s, x, y) ? 1 : 0;
    }
  }
  return m;
}

struct RenderedScene {
  Image image;
  std::vector<Annotation> annotations;
  std::vector<PlacedShape> shapes;
};

namespace detail {

inline double box_iou(const PlacedShape& a, const PlacedShape& b) {
  const int ix = std::min(a.x0 + a.w, b.x0 + b.w) - std::max(a.x0, b.x0);
  const int iy = std::min(a.y0 + a.h, b.y0 + b.h) - std::max(a.y0, b.y0);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = static_cast<double>(ix) * iy;
  return inter / (static_cast<double>(a.w) * a.h + static_cast<double>(b.w) * b.h - inter);
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

}  // namespace detail

/// Paints the given shapes (in order) over a noisy background.
inline RenderedScene render_shapes(const SceneSpec& spec, std::vector<PlacedShape> shapes,
                                   std::uint64_t seed) {
  validate(spec);
  Rng rng(derive_seed(seed, "paint"));
  const int n = spec.image_size;
  const bool dark_background = rng.uniform() < 0.5;
  std::array<double, 3> bg{};
  for (auto& c : bg) c = dark_background ? rng.uniform(0.05, 0.35) : rng.uniform(0.65, 0.95);
  std::vector<double> canvas(3 * static_cast<std::size_t>(n) * n);
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) canvas[c * plane + i] = bg[c] + spec.background_noise * rng.normal();
  }
  for (const auto& s : shapes) {
    for (int y = s.y0; y < s.y0 + s.h; ++y) {
      for (int x = s.x0; x < s.x0 + s.w; ++x) {
        if (!shape_contains(s, x, y)) continue;
        const std::size_t i = static_cast<std::size_t>(y) * n + x;
        for (std::size_t c = 0; c < 3; ++c) canvas[c * plane + i] = s.color[c] + spec.texture_noise * rng.normal();
      }
    }
  }
  RenderedScene out;
  out.image = Image(static_cast<std::size_t>(n), static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < canvas.size(); ++i) out.image.pixels[i] = detail::to_byte(canvas[i]);
  for (const auto& s : shapes) out.annotations.push_back(s.annotation(n));
  out.shapes = std::move(shapes);
  return out;
}

/// Samples 1..4 non-overlapping shapes and renders them. Deterministic per seed.
inline RenderedScene render_scene(const SceneSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(derive_seed(seed, "layout"));
  const int n = spec.image_size;
  const int count = spec.min_objects + static_cast<int>(rng.index(
                                           static_cast<std::size_t>(spec.max_objects - spec.min_objects + 1)));
  // Scene polarity is decided in render_shapes from the same seed; objects
  // get the opposite brightness so that shape, not colour, identifies class.
  const bool dark_background = Rng(derive_seed(seed, "paint")).uniform() < 0.5;
  std::vector<PlacedShape> shapes;
  for (int k = 0; k < count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      PlacedShape s;
      s.kind = static_cast<ShapeKind>(rng.index(static_cast<std::size_t>(spec.num_classes)));
      const double side = rng.uniform(spec.min_size, spec.max_size) * n;
      const double ratio = rng.uniform(1.0 - spec.aspect_jitter, 1.0 + spec.aspect_jitter);
      s.w = std::clamp(static_cast<int>(std::lround(side * std::sqrt(ratio))), 3, n);
      s.h = std::clamp(static_cast<int>(std::lround(side / std::sqrt(ratio))), 3, n);
      s.x0 = static_cast<int>(rng.index(static_cast<std::size_t>(n - s.w + 1)));
      s.y0 = static_cast<int>(rng.index(static_cast<std::size_t>(n - s.h + 1)));
      const double base = dark_background ? rng.uniform(0.6, 0.95) : rng.uniform(0.05, 0.4);
      for (auto& c : s.color) c = std::clamp(base + spec.color_jitter * (2.0 * rng.uniform() - 1.0), 0.0, 1.0);
      placed = std::all_of(shapes.begin(), shapes.end(), [&](const PlacedShape& o) {
        return detail::box_iou(s, o) <= spec.max_overlap_iou;
      });
      if (placed) shapes.push_back(s);
    }
    if (!placed) throw Error("render_scene: placement failed after 100 attempts");
  }
  return render_shapes(spec, std::move(shapes), seed);
}

}  // namespace slw
