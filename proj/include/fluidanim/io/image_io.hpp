#pragma once

// 8- and 16-bit PNG (libpng) and binary PNM (P5 / P6) images, plus masks.
// Samples map to [0, 1]: value / 255 or value / 65535.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fluidanim/error.hpp"
#include "fluidanim/io/flo.hpp"
#include "fluidanim/types.hpp"

namespace fluidanim::io {

enum class ImageFormat { png, pnm };

inline ImageFormat format_for_path(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return ImageFormat::png;
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return ImageFormat::pnm;
  throw IoError(path, "unsupported image extension '" + ext + "'");
}

namespace detail {

inline std::uint16_t quantize(float v, int bit_depth) {
  const double max = bit_depth == 16 ? 65535.0 : 255.0;
  const double c = std::isfinite(v) ? std::clamp(static_cast<double>(v), 0.0, 1.0) : 0.0;
  return static_cast<std::uint16_t>(std::lround(c * max));
}

inline void check_bit_depth(int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16)
    throw ValidationError("bit_depth", "unsupported bit depth " + std::to_string(bit_depth));
}

// Interleaved samples, big-endian for 16-bit (PNG and PNM agree).
inline std::vector<std::uint8_t> pack_samples(const ImageBuffer& image, int bit_depth) {
  const auto values = image.values();
  std::vector<std::uint8_t> out(values.size() * (bit_depth / 8));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint16_t q = quantize(values[i], bit_depth);
    if (bit_depth == 16) {
      out[2 * i] = static_cast<std::uint8_t>(q >> 8);
      out[2 * i + 1] = static_cast<std::uint8_t>(q & 0xff);
    } else {
      out[i] = static_cast<std::uint8_t>(q);
    }
  }
  return out;
}

inline void unpack_samples(const std::uint8_t* src, int bit_depth, ImageBuffer& image) {
  auto values = image.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (bit_depth == 16)
      values[i] = static_cast<float>((src[2 * i] << 8 | src[2 * i + 1]) / 65535.0);
    else
      values[i] = static_cast<float>(src[i] / 255.0);
  }
}

struct PngReadState {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

struct PngError {
  std::string message;
};

inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* err = static_cast<PngError*>(png_get_error_ptr(png));
  err->message = msg ? msg : "libpng error";
  png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

struct DecodedImage {
  ImageBuffer image;
  int bit_depth = 8;
};

inline DecodedImage decode_png(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw IoError(origin, "not a PNG file");
  detail::PngError err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw IoError(origin, "cannot create PNG reader");
  png_infop info = png_create_info_struct(png);
  detail::PngReadState state{bytes, 0};
  std::vector<std::uint8_t> raw;
  std::vector<png_bytep> rows;
  struct {
    int width = 0, height = 0, channels = 0, depth = 0;
    bool bad_depth = false;
  } h;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(origin, "PNG decode failed: " + err.message);
  }
  png_set_read_fn(png, &state, [](png_structp p, png_bytep out, png_size_t n) {
    auto* s = static_cast<detail::PngReadState*>(png_get_io_ptr(p));
    if (s->pos + n > s->bytes.size()) png_error(p, "truncated PNG data");
    std::memcpy(out, s->bytes.data() + s->pos, n);
    s->pos += n;
  });
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  h.depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    png_set_palette_to_rgb(png);
    h.depth = 8;
  } else if (h.depth < 8) {
    h.bad_depth = true;
  }
  if (!h.bad_depth) {
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    h.width = static_cast<int>(png_get_image_width(png, info));
    h.height = static_cast<int>(png_get_image_height(png, info));
    h.channels = png_get_channels(png, info);
    h.depth = png_get_bit_depth(png, info);
    const png_size_t stride = png_get_rowbytes(png, info);
    raw.resize(stride * static_cast<std::size_t>(h.height));
    rows.resize(static_cast<std::size_t>(h.height));
    for (int y = 0; y < h.height; ++y) rows[static_cast<std::size_t>(y)] = raw.data() + stride * y;
    png_read_image(png, rows.data());
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (h.bad_depth) throw ValidationError("bit_depth", "unsupported bit depth " + std::to_string(h.depth));

  DecodedImage out{ImageBuffer(h.width, h.height, h.channels), h.depth};
  detail::unpack_samples(raw.data(), h.depth, out.image);
  return out;
}

inline std::vector<std::uint8_t> encode_png(const ImageBuffer& image, int bit_depth = 8, int compression = 6) {
  detail::check_bit_depth(bit_depth);
  if (image.empty()) throw ValidationError("image", "image is empty");
  int color_type = 0;
  switch (image.channels()) {
    case 1: color_type = PNG_COLOR_TYPE_GRAY; break;
    case 2: color_type = PNG_COLOR_TYPE_GRAY_ALPHA; break;
    case 3: color_type = PNG_COLOR_TYPE_RGB; break;
    case 4: color_type = PNG_COLOR_TYPE_RGBA; break;
    default: throw ValidationError("channels", "PNG supports 1 to 4 channels");
  }
  const std::vector<std::uint8_t> samples = detail::pack_samples(image, bit_depth);
  const std::size_t stride = static_cast<std::size_t>(image.width()) * image.channels() * (bit_depth / 8);
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height()));
  for (int y = 0; y < image.height(); ++y)
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(samples.data() + stride * y);

  detail::PngError err;
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw IoError("<memory>", "cannot create PNG writer");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("<memory>", "PNG encode failed: " + err.message);
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t n) {
        auto* v = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        v->insert(v->end(), data, data + n);
      },
      [](png_structp) {});
  png_set_compression_level(png, compression);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()), static_cast<png_uint_32>(image.height()), bit_depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
  return out;
}

namespace detail {

inline std::size_t pnm_token(std::span<const std::uint8_t> b, std::size_t pos, long& value, const std::string& origin) {
  for (;;) {
    while (pos < b.size() && std::isspace(b[pos])) ++pos;
    if (pos < b.size() && b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= b.size() || !std::isdigit(b[pos])) throw IoError(origin, "malformed PNM header");
  value = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    value = value * 10 + (b[pos] - '0');
    if (value > 1 << 24) throw IoError(origin, "PNM header value out of range");
    ++pos;
  }
  return pos;
}

}  // namespace detail

inline DecodedImage decode_pnm(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw IoError(origin, "not a binary PGM/PPM file");
  const int channels = bytes[1] == '5' ? 1 : 3;
  long width = 0, height = 0, maxval = 0;
  std::size_t pos = detail::pnm_token(bytes, 2, width, origin);
  pos = detail::pnm_token(bytes, pos, height, origin);
  pos = detail::pnm_token(bytes, pos, maxval, origin);
  if (width <= 0 || height <= 0) throw IoError(origin, "non-positive PNM dimensions");
  if (maxval != 255 && maxval != 65535)
    throw ValidationError("bit_depth", "unsupported PNM maxval " + std::to_string(maxval));
  ++pos;  // single whitespace before the raster
  const int depth = maxval == 255 ? 8 : 16;
  const std::size_t need = static_cast<std::size_t>(width) * height * channels * (depth / 8);
  if (bytes.size() < pos + need) throw IoError(origin, "truncated PNM raster");
  DecodedImage out{ImageBuffer(static_cast<int>(width), static_cast<int>(height), channels), depth};
  detail::unpack_samples(bytes.data() + pos, depth, out.image);
  return out;
}

inline std::vector<std::uint8_t> encode_pnm(const ImageBuffer& image, int bit_depth = 8) {
  detail::check_bit_depth(bit_depth);
  if (image.channels() != 1 && image.channels() != 3) throw ValidationError("channels", "PNM supports 1 or 3 channels");
  const std::string header = std::string(image.channels() == 1 ? "P5\n" : "P6\n") + std::to_string(image.width()) + " " +
                             std::to_string(image.height()) + "\n" + (bit_depth == 16 ? "65535" : "255") + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto samples = detail::pack_samples(image, bit_depth);
  out.insert(out.end(), samples.begin(), samples.end());
  return out;
}

// Sniffs PNG or PNM from the leading bytes.
inline DecodedImage decode_image(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>") {
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes, origin);
  if (bytes.size() >= 2 && bytes[0] == 'P') return decode_pnm(bytes, origin);
  throw IoError(origin, "unrecognized image format");
}

inline ImageBuffer read_image(const std::string& path) { return decode_image(detail::read_file(path), path).image; }

inline void write_image(const ImageBuffer& image, const std::string& path, int bit_depth = 8) {
  const ImageFormat fmt = format_for_path(path);
  detail::write_file(path, fmt == ImageFormat::png ? encode_png(image, bit_depth) : encode_pnm(image, bit_depth));
}

// Grayscale -> [0, 1]. Colour inputs are reduced to Rec. 601 luma.
inline MaskMap mask_from_image(const ImageBuffer& image) {
  MaskMap mask(image.width(), image.height());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const float* p = image.pixel(x, y);
      float v = p[0];
      if (image.channels() >= 3 && !(p[0] == p[1] && p[1] == p[2]))
        v = static_cast<float>(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]);
      mask.set(x, y, v);
    }
  }
  return mask;
}

inline ImageBuffer mask_to_image(const MaskMap& mask) {
  ImageBuffer image(mask.width(), mask.height(), 1);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) image.at(x, y, 0) = mask.at(x, y);
  return image;
}

inline MaskMap decode_mask(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>") {
  return mask_from_image(decode_image(bytes, origin).image);
}

inline MaskMap read_mask(const std::string& path) { return decode_mask(detail::read_file(path), path); }

// A mask read alongside an image must match it.
inline MaskMap read_mask(const std::string& path, const ImageBuffer& companion) {
  MaskMap mask = read_mask(path);
  if (!mask.same_shape(companion))
    throw ValidationError("mask", "mask is " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()) +
                                      ", image is " + std::to_string(companion.width()) + "x" +
                                      std::to_string(companion.height()));
  return mask;
}

inline void write_mask(const MaskMap& mask, const std::string& path) { write_image(mask_to_image(mask), path, 8); }

}  // namespace fluidanim::io
