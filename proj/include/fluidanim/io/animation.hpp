#pragma once

// Animation output: numbered PNG sequences, animated PNG, and GIF89a with a
// median-cut palette shared by all frames.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "fluidanim/error.hpp"
#include "fluidanim/io/flo.hpp"
#include "fluidanim/io/image_io.hpp"
#include "fluidanim/types.hpp"

namespace fluidanim::io {

enum class AnimationFormat { png_sequence, animated_png, gif };

inline std::string to_string(AnimationFormat f) {
  switch (f) {
    case AnimationFormat::png_sequence: return "png_sequence";
    case AnimationFormat::animated_png: return "animated_png";
    case AnimationFormat::gif: return "gif";
  }
  return "unknown";
}

inline AnimationFormat parse_animation_format(const std::string& s) {
  if (s == "png_sequence" || s == "png") return AnimationFormat::png_sequence;
  if (s == "animated_png" || s == "apng") return AnimationFormat::animated_png;
  if (s == "gif") return AnimationFormat::gif;
  throw ValidationError("format", "unknown animation format '" + s + "'");
}

inline constexpr double kDefaultFps = 30.0;

struct AnimationManifest {
  AnimationFormat format = AnimationFormat::png_sequence;
  std::string path;
  double fps = kDefaultFps;
  int width = 0;
  int height = 0;
  std::vector<std::string> files;
  std::vector<double> durations_ms;
};

namespace detail {

inline void check_frames(std::span<const ImageBuffer> frames) {
  if (frames.empty()) throw ValidationError("frames", "no frames to write");
  for (std::size_t i = 1; i < frames.size(); ++i)
    if (!frames[i].same_shape(frames[0]) || frames[i].channels() != frames[0].channels())
      throw ValidationError("frames[" + std::to_string(i) + "]", "frame dimensions differ from frame 0");
}

inline void check_fps(double fps) {
  if (!(fps > 0.0) || fps > 600.0) throw ValidationError("fps", "fps must lie in (0, 600]");
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_be16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

inline void put_le16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void png_chunk(std::vector<std::uint8_t>& out, const char type[4], std::span<const std::uint8_t> data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t type_pos = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + type_pos, static_cast<uInt>(4 + data.size()));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

// zlib stream of 8-bit scanlines, each prefixed with filter type 0.
inline std::vector<std::uint8_t> deflate_scanlines(const ImageBuffer& frame) {
  const std::size_t stride = static_cast<std::size_t>(frame.width()) * frame.channels();
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * frame.height());
  const auto samples = pack_samples(frame, 8);
  for (int y = 0; y < frame.height(); ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), samples.begin() + static_cast<std::ptrdiff_t>(stride * y),
               samples.begin() + static_cast<std::ptrdiff_t>(stride * (y + 1)));
  }
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> out(len);
  if (compress2(out.data(), &len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("<memory>", "zlib compression failed");
  out.resize(len);
  return out;
}

}  // namespace detail

// APNG, 8-bit, looping forever; every frame lasts 1 / fps.
inline std::vector<std::uint8_t> encode_apng(std::span<const ImageBuffer> frames, double fps = kDefaultFps) {
  detail::check_frames(frames);
  detail::check_fps(fps);
  const ImageBuffer& f0 = frames[0];
  std::uint8_t color_type = 0;
  switch (f0.channels()) {
    case 1: color_type = 0; break;
    case 2: color_type = 4; break;
    case 3: color_type = 2; break;
    case 4: color_type = 6; break;
    default: throw ValidationError("channels", "animated PNG supports 1 to 4 channels");
  }
  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(f0.width()));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(f0.height()));
  ihdr.insert(ihdr.end(), {8, color_type, 0, 0, 0});
  detail::png_chunk(out, "IHDR", ihdr);

  std::vector<std::uint8_t> actl;
  detail::put_be32(actl, static_cast<std::uint32_t>(frames.size()));
  detail::put_be32(actl, 0);
  detail::png_chunk(out, "acTL", actl);

  const auto delay_den = static_cast<std::uint16_t>(std::lround(fps * 100.0));
  std::uint32_t seq = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    std::vector<std::uint8_t> fctl;
    detail::put_be32(fctl, seq++);
    detail::put_be32(fctl, static_cast<std::uint32_t>(f0.width()));
    detail::put_be32(fctl, static_cast<std::uint32_t>(f0.height()));
    detail::put_be32(fctl, 0);
    detail::put_be32(fctl, 0);
    detail::put_be16(fctl, 100);
    detail::put_be16(fctl, delay_den);
    fctl.push_back(0);  // dispose: none
    fctl.push_back(0);  // blend: source
    detail::png_chunk(out, "fcTL", fctl);

    std::vector<std::uint8_t> data = detail::deflate_scanlines(frames[i]);
    if (i == 0) {
      detail::png_chunk(out, "IDAT", data);
    } else {
      std::vector<std::uint8_t> fdat;
      fdat.reserve(data.size() + 4);
      detail::put_be32(fdat, seq++);
      fdat.insert(fdat.end(), data.begin(), data.end());
      detail::png_chunk(out, "fdAT", fdat);
    }
  }
  detail::png_chunk(out, "IEND", {});
  return out;
}

using Rgb = std::array<std::uint8_t, 3>;

inline Rgb to_rgb8(const ImageBuffer& frame, int x, int y) {
  const float* p = frame.pixel(x, y);
  if (frame.channels() < 3) {
    const auto g = static_cast<std::uint8_t>(detail::quantize(p[0], 8));
    return {g, g, g};
  }
  return {static_cast<std::uint8_t>(detail::quantize(p[0], 8)), static_cast<std::uint8_t>(detail::quantize(p[1], 8)),
          static_cast<std::uint8_t>(detail::quantize(p[2], 8))};
}

// At most 256 colours for a set of frames: the exact colours when they fit,
// otherwise median cut over the weighted colour histogram.
class Palette {
 public:
  static Palette build(std::span<const ImageBuffer> frames, std::size_t max_colors = 256) {
    std::unordered_map<std::uint32_t, std::uint64_t> histogram;
    for (const ImageBuffer& f : frames)
      for (int y = 0; y < f.height(); ++y)
        for (int x = 0; x < f.width(); ++x) ++histogram[pack(to_rgb8(f, x, y))];

    Palette pal;
    if (histogram.size() <= max_colors) {
      std::vector<std::uint32_t> keys;
      for (const auto& [k, n] : histogram) keys.push_back(k);
      std::sort(keys.begin(), keys.end());
      for (std::uint32_t k : keys) pal.colors_.push_back(unpack(k));
      return pal;
    }

    struct Entry {
      Rgb c;
      std::uint64_t n;
    };
    std::vector<Entry> entries;
    entries.reserve(histogram.size());
    for (const auto& [k, n] : histogram) entries.push_back({unpack(k), n});
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return pack(a.c) < pack(b.c); });

    struct Box {
      std::size_t begin, end;
    };
    std::vector<Box> boxes{{0, entries.size()}};
    auto range = [&](const Box& b, int ch) {
      int lo = 255, hi = 0;
      for (std::size_t i = b.begin; i < b.end; ++i) {
        lo = std::min<int>(lo, entries[i].c[static_cast<std::size_t>(ch)]);
        hi = std::max<int>(hi, entries[i].c[static_cast<std::size_t>(ch)]);
      }
      return hi - lo;
    };
    while (boxes.size() < max_colors) {
      // Split the box with the widest channel range.
      int best_box = -1, best_ch = 0, best_range = 0;
      for (std::size_t b = 0; b < boxes.size(); ++b) {
        if (boxes[b].end - boxes[b].begin < 2) continue;
        for (int ch = 0; ch < 3; ++ch) {
          const int r = range(boxes[b], ch);
          if (r > best_range) {
            best_range = r;
            best_box = static_cast<int>(b);
            best_ch = ch;
          }
        }
      }
      if (best_box < 0) break;
      Box& box = boxes[static_cast<std::size_t>(best_box)];
      const auto first = entries.begin() + static_cast<std::ptrdiff_t>(box.begin);
      const auto last = entries.begin() + static_cast<std::ptrdiff_t>(box.end);
      std::sort(first, last, [best_ch](const Entry& a, const Entry& b) {
        return a.c[static_cast<std::size_t>(best_ch)] < b.c[static_cast<std::size_t>(best_ch)] ||
               (a.c[static_cast<std::size_t>(best_ch)] == b.c[static_cast<std::size_t>(best_ch)] && pack(a.c) < pack(b.c));
      });
      std::uint64_t total = 0;
      for (auto it = first; it != last; ++it) total += it->n;
      std::uint64_t acc = 0;
      std::size_t split = box.begin;
      for (std::size_t i = box.begin; i < box.end - 1; ++i) {
        acc += entries[i].n;
        split = i + 1;
        if (2 * acc >= total) break;
      }
      const Box upper{split, box.end};
      box.end = split;
      boxes.push_back(upper);
    }
    for (const Box& b : boxes) {
      double sum[3] = {0, 0, 0};
      double n = 0;
      for (std::size_t i = b.begin; i < b.end; ++i) {
        for (int ch = 0; ch < 3; ++ch) sum[ch] += static_cast<double>(entries[i].c[static_cast<std::size_t>(ch)]) * entries[i].n;
        n += static_cast<double>(entries[i].n);
      }
      pal.colors_.push_back({static_cast<std::uint8_t>(std::lround(sum[0] / n)),
                             static_cast<std::uint8_t>(std::lround(sum[1] / n)),
                             static_cast<std::uint8_t>(std::lround(sum[2] / n))});
    }
    return pal;
  }

  const std::vector<Rgb>& colors() const noexcept { return colors_; }

  // Nearest palette entry (squared RGB distance, lowest index on ties).
  std::uint8_t index_of(Rgb c) const {
    const std::uint32_t key = pack(c);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    int best = 0;
    long best_d = -1;
    for (std::size_t i = 0; i < colors_.size(); ++i) {
      long d = 0;
      for (int ch = 0; ch < 3; ++ch) {
        const long diff = static_cast<long>(c[static_cast<std::size_t>(ch)]) - colors_[i][static_cast<std::size_t>(ch)];
        d += diff * diff;
      }
      if (best_d < 0 || d < best_d) {
        best_d = d;
        best = static_cast<int>(i);
      }
    }
    cache_.emplace(key, static_cast<std::uint8_t>(best));
    return static_cast<std::uint8_t>(best);
  }

  static std::uint32_t pack(Rgb c) {
    return static_cast<std::uint32_t>(c[0]) << 16 | static_cast<std::uint32_t>(c[1]) << 8 | c[2];
  }
  static Rgb unpack(std::uint32_t k) {
    return {static_cast<std::uint8_t>(k >> 16), static_cast<std::uint8_t>(k >> 8), static_cast<std::uint8_t>(k)};
  }

 private:
  std::vector<Rgb> colors_;
  mutable std::unordered_map<std::uint32_t, std::uint8_t> cache_;
};

namespace detail {

// GIF variable-width LZW with 8-bit minimum code size, packed LSB first and
// split into <= 255-byte sub-blocks.
inline void gif_lzw(std::span<const std::uint8_t> indices, std::vector<std::uint8_t>& out) {
  constexpr int kMinCodeSize = 8;
  constexpr int kClear = 1 << kMinCodeSize;
  constexpr int kEnd = kClear + 1;
  out.push_back(kMinCodeSize);

  std::vector<std::uint8_t> packed;
  std::uint32_t bit_buffer = 0;
  int bit_count = 0;
  int code_size = kMinCodeSize + 1;
  auto emit = [&](int code) {
    bit_buffer |= static_cast<std::uint32_t>(code) << bit_count;
    bit_count += code_size;
    while (bit_count >= 8) {
      packed.push_back(static_cast<std::uint8_t>(bit_buffer & 0xff));
      bit_buffer >>= 8;
      bit_count -= 8;
    }
  };

  std::unordered_map<std::uint32_t, int> dict;
  int next_code = kEnd + 1;
  emit(kClear);
  if (!indices.empty()) {
    int prefix = indices[0];
    for (std::size_t i = 1; i < indices.size(); ++i) {
      const std::uint32_t key = static_cast<std::uint32_t>(prefix) << 8 | indices[i];
      if (auto it = dict.find(key); it != dict.end()) {
        prefix = it->second;
        continue;
      }
      emit(prefix);
      dict.emplace(key, next_code++);
      if (next_code > (1 << code_size) && code_size < 12) ++code_size;
      if (next_code == 4096) {
        emit(kClear);
        dict.clear();
        next_code = kEnd + 1;
        code_size = kMinCodeSize + 1;
      }
      prefix = indices[i];
    }
    emit(prefix);
  }
  emit(kEnd);
  if (bit_count > 0) packed.push_back(static_cast<std::uint8_t>(bit_buffer & 0xff));

  for (std::size_t pos = 0; pos < packed.size(); pos += 255) {
    const std::size_t n = std::min<std::size_t>(255, packed.size() - pos);
    out.push_back(static_cast<std::uint8_t>(n));
    out.insert(out.end(), packed.begin() + static_cast<std::ptrdiff_t>(pos),
               packed.begin() + static_cast<std::ptrdiff_t>(pos + n));
  }
  out.push_back(0);
}

// Per-frame GIF delays in centiseconds; cumulative rounding keeps the total
// duration at frames / fps.
inline std::vector<std::uint16_t> gif_delays(std::size_t n, double fps) {
  std::vector<std::uint16_t> d(n);
  for (std::size_t i = 0; i < n; ++i)
    d[i] = static_cast<std::uint16_t>(std::lround((i + 1) * 100.0 / fps) - std::lround(i * 100.0 / fps));
  return d;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_gif(std::span<const ImageBuffer> frames, double fps = kDefaultFps) {
  detail::check_frames(frames);
  detail::check_fps(fps);
  const int w = frames[0].width(), h = frames[0].height();
  if (w > 65535 || h > 65535) throw ValidationError("frames", "GIF dimensions are limited to 65535");
  const Palette palette = Palette::build(frames);

  std::vector<std::uint8_t> out{'G', 'I', 'F', '8', '9', 'a'};
  detail::put_le16(out, static_cast<std::uint16_t>(w));
  detail::put_le16(out, static_cast<std::uint16_t>(h));
  out.push_back(0xF7);  // global table, 8 bits colour resolution, 256 entries
  out.push_back(0);
  out.push_back(0);
  for (std::size_t i = 0; i < 256; ++i) {
    const Rgb c = i < palette.colors().size() ? palette.colors()[i] : Rgb{0, 0, 0};
    out.insert(out.end(), c.begin(), c.end());
  }
  // NETSCAPE2.0 loop forever.
  const std::uint8_t loop[] = {0x21, 0xFF, 0x0B, 'N', 'E', 'T', 'S', 'C', 'A', 'P', 'E', '2', '.', '0', 0x03, 0x01, 0x00, 0x00, 0x00};
  out.insert(out.end(), std::begin(loop), std::end(loop));

  const auto delays = detail::gif_delays(frames.size(), fps);
  std::vector<std::uint8_t> indices(static_cast<std::size_t>(w) * h);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    out.insert(out.end(), {0x21, 0xF9, 0x04, 0x04});  // disposal: do not dispose
    detail::put_le16(out, delays[f]);
    out.push_back(0);
    out.push_back(0);
    out.push_back(0x2C);
    detail::put_le16(out, 0);
    detail::put_le16(out, 0);
    detail::put_le16(out, static_cast<std::uint16_t>(w));
    detail::put_le16(out, static_cast<std::uint16_t>(h));
    out.push_back(0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        indices[static_cast<std::size_t>(y) * w + x] = palette.index_of(to_rgb8(frames[f], x, y));
    detail::gif_lzw(indices, out);
  }
  out.push_back(0x3B);
  return out;
}

inline std::string frame_file_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu.png", i);
  return buf;
}

// png_sequence writes <path>/0000.png ...; the other formats write `path`.
inline AnimationManifest write_animation(std::span<const ImageBuffer> frames, const std::string& path,
                                         AnimationFormat format, double fps = kDefaultFps) {
  detail::check_frames(frames);
  detail::check_fps(fps);
  AnimationManifest m{format, path, fps, frames[0].width(), frames[0].height(), {}, {}};
  namespace fs = std::filesystem;
  switch (format) {
    case AnimationFormat::png_sequence: {
      std::error_code ec;
      fs::create_directories(path, ec);
      if (!fs::is_directory(path)) throw IoError(path, "cannot create output directory");
      for (std::size_t i = 0; i < frames.size(); ++i) {
        const std::string name = frame_file_name(i);
        detail::write_file((fs::path(path) / name).string(), encode_png(frames[i]));
        m.files.push_back(name);
        m.durations_ms.push_back(1000.0 / fps);
      }
      break;
    }
    case AnimationFormat::animated_png:
      detail::write_file(path, encode_apng(frames, fps));
      m.files.push_back(fs::path(path).filename().string());
      m.durations_ms.assign(frames.size(), 1000.0 / fps);
      break;
    case AnimationFormat::gif: {
      detail::write_file(path, encode_gif(frames, fps));
      m.files.push_back(fs::path(path).filename().string());
      for (std::uint16_t d : detail::gif_delays(frames.size(), fps)) m.durations_ms.push_back(10.0 * d);
      break;
    }
  }
  return m;
}

}  // namespace fluidanim::io
