#pragma once

// Middlebury .flo: float32 magic 202021.25, int32 width, int32 height,
// then width * height interleaved (u, v) float32, row-major. Always
// little-endian on disk.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <limits>
#include <string>
#include <vector>

#include "fluidanim/error.hpp"
#include "fluidanim/types.hpp"

namespace fluidanim::io {

inline constexpr float kFloMagic = 202021.25f;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path, "write failed");
}

}  // namespace detail

// Components are stored as float32; values outside float range are rejected.
inline std::vector<std::uint8_t> encode_flo(const FlowField& field) {
  if (field.width() <= 0 || field.height() <= 0) throw ValidationError("field", "flow dimensions must be positive");
  std::vector<std::uint8_t> out;
  out.reserve(12 + field.size() * 8);
  detail::put_u32(out, std::bit_cast<std::uint32_t>(kFloMagic));
  detail::put_u32(out, static_cast<std::uint32_t>(field.width()));
  detail::put_u32(out, static_cast<std::uint32_t>(field.height()));
  for (Vec2 v : field.values()) {
    for (double c : {v.x, v.y}) {
      if (!std::isfinite(c) || std::abs(c) > std::numeric_limits<float>::max())
        throw ValidationError("field", "flow component not representable as float32");
      detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(c)));
    }
  }
  return out;
}

inline FlowField decode_flo(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>",
                            FlowKind kind = FlowKind::dense) {
  if (bytes.size() < 12) throw IoError(origin, "truncated .flo header");
  if (std::bit_cast<float>(detail::get_u32(bytes.data())) != kFloMagic) throw IoError(origin, "bad magic");
  const auto width = static_cast<std::int32_t>(detail::get_u32(bytes.data() + 4));
  const auto height = static_cast<std::int32_t>(detail::get_u32(bytes.data() + 8));
  if (width <= 0 || height <= 0) throw IoError(origin, "non-positive dimensions in .flo header");
  const std::uint64_t expected = 12 + static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height) * 8;
  if (bytes.size() < expected) throw IoError(origin, "truncated .flo payload");
  FlowField field(width, height, kind);
  const std::uint8_t* p = bytes.data() + 12;
  for (std::size_t i = 0; i < field.size(); ++i, p += 8)
    field[i] = {std::bit_cast<float>(detail::get_u32(p)), std::bit_cast<float>(detail::get_u32(p + 4))};
  return field;
}

inline void write_flo(const FlowField& field, const std::string& path) { detail::write_file(path, encode_flo(field)); }

inline FlowField read_flo(const std::string& path, FlowKind kind = FlowKind::dense) {
  return decode_flo(detail::read_file(path), path, kind);
}

}  // namespace fluidanim::io
