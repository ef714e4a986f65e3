#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "slw/numerics/tensor.hpp"

// Parameter checkpoint file, little-endian:
//   "SLVW" | u32 version | u32 count | per tensor:
//   u32 name_len | name bytes (UTF-8) | u32 rank | u32 extents[rank] | f32 data[volume]

namespace slw {

inline constexpr std::array<char, 4> kCheckpointMagic{'S', 'L', 'V', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw Error("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const ParamStore<float>& params) {
  os.write(kCheckpointMagic.data(), 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (float v : t.data()) detail::put_u32(os, std::bit_cast<std::uint32_t>(v));
  }
  if (!os) throw Error("checkpoint: write failed");
}

inline ParamStore<float> read_checkpoint(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kCheckpointMagic) {
    throw Error("checkpoint: bad magic (expected SLVW)");
  }
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion) {
    throw Error("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = detail::get_u32(is);
  ParamStore<float> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = detail::get_u32(is);
    if (len > (1u << 16)) throw Error("checkpoint: implausible name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw Error("checkpoint: truncated name");
    const std::uint32_t rank = detail::get_u32(is);
    if (rank == 0 || rank > 8) throw Error("checkpoint: bad rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_u32(is);
    Tensor<float> t(shape);
    for (float& v : t.data()) v = std::bit_cast<float>(detail::get_u32(is));
    out.add(std::move(name), std::move(t));
  }
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const ParamStore<float>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("checkpoint: cannot open " + path.string() + " for writing");
  write_checkpoint(os, params);
}

inline ParamStore<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("checkpoint: cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace slw
