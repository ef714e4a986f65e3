#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slw/numerics/tensor.hpp"
#include "slw/synthdata/annotation.hpp"

namespace slw {

/// 8-bit RGB image stored planar as [3, height, width].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(3 * h * w, fill) {}

  std::uint8_t& at(std::size_t c, std::size_t y, std::size_t x) {
    return pixels[(c * height + y) * width + x];
  }
  std::uint8_t at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Network input: values scaled to [0, 1].
template <class T>
Tensor<T> to_tensor(const Image& img) {
  Tensor<T> t(Shape{3, img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = static_cast<T>(img.pixels[i]) / T(255);
  return t;
}

/// Clamps the box to the image, crops it, and bilinearly resizes the crop to
/// out_size x out_size. Sampling maps output pixel centres onto the crop, so a
/// pixel-aligned crop whose size equals out_size is copied exactly.
inline Image crop_resize(const Image& img, const Annotation& box, std::size_t out_size) {
  if (out_size == 0) throw Error("crop_resize: out_size must be positive");
  const double W = static_cast<double>(img.width), H = static_cast<double>(img.height);
  const double x0 = std::clamp(box.x0() * W, 0.0, W), x1 = std::clamp(box.x1() * W, 0.0, W);
  const double y0 = std::clamp(box.y0() * H, 0.0, H), y1 = std::clamp(box.y1() * H, 0.0, H);
  if (!(x1 - x0 > 1e-9) || !(y1 - y0 > 1e-9)) throw Error("crop_resize: clamped box has zero area");
  const double sx = (x1 - x0) / static_cast<double>(out_size);
  const double sy = (y1 - y0) / static_cast<double>(out_size);
  Image out(out_size, out_size);
  for (std::size_t oy = 0; oy < out_size; ++oy) {
    const double fy = std::clamp(y0 + (static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0, H - 1.0);
    const auto iy = static_cast<std::size_t>(fy);
    const std::size_t iy1 = std::min(iy + 1, img.height - 1);
    const double ty = fy - static_cast<double>(iy);
    for (std::size_t ox = 0; ox < out_size; ++ox) {
      const double fx = std::clamp(x0 + (static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0, W - 1.0);
      const auto ix = static_cast<std::size_t>(fx);
      const std::size_t ix1 = std::min(ix + 1, img.width - 1);
      const double tx = fx - static_cast<double>(ix);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = img.at(c, iy, ix) * (1.0 - tx) + img.at(c, iy, ix1) * tx;
        const double bot = img.at(c, iy1, ix) * (1.0 - tx) + img.at(c, iy1, ix1) * tx;
        const double v = top * (1.0 - ty) + bot * ty;
        out.at(c, oy, ox) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> interleaved(img.pixels.size());
  const std::size_t plane = img.height * img.width;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) interleaved[3 * i + c] = img.pixels[c * plane + i];
  }
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.string().c_str(), 0, interleaved.data(), 0, nullptr)) {
    const std::string msg = pi.message;
    png_image_free(&pi);
    throw Error("write_png: " + path.string() + ": " + msg);
  }
}

inline Image read_png(const std::filesystem::path& path) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.string().c_str())) {
    throw Error("read_png: " + path.string() + ": " + pi.message);
  }
  pi.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> interleaved(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, interleaved.data(), 0, nullptr)) {
    const std::string msg = pi.message;
    png_image_free(&pi);
    throw Error("read_png: " + path.string() + ": " + msg);
  }
  Image img(pi.height, pi.width);
  const std::size_t plane = img.height * img.width;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) img.pixels[c * plane + i] = interleaved[3 * i + c];
  }
  return img;
}

}  // namespace slw
