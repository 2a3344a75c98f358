#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fluidanim/error.hpp"

namespace fluidanim {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
  friend constexpr bool operator==(Vec2, Vec2) = default;
};

inline bool is_finite(Vec2 v) { return std::isfinite(v.x) && std::isfinite(v.y); }

// Dense row-major 2-D grid of T.
template <class T>
class Raster {
 public:
  using value_type = T;

  Raster() = default;
  Raster(int width, int height, T fill = T{}) : width_(width), height_(height) {
    if (width < 0 || height < 0) throw ValidationError("", "negative raster dimensions");
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& at(int x, int y) { return data_[index(x, y)]; }
  const T& at(int x, int y) const { return data_[index(x, y)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::span<T> row(int y) { return std::span<T>(data_).subspan(index(0, y), static_cast<std::size_t>(width_)); }
  std::span<const T> row(int y) const {
    return std::span<const T>(data_).subspan(index(0, y), static_cast<std::size_t>(width_));
  }

  bool same_shape(int width, int height) const noexcept { return width_ == width && height_ == height; }
  template <class R>
  bool same_shape(const R& other) const noexcept {
    return same_shape(other.width(), other.height());
  }

  friend bool operator==(const Raster&, const Raster&) = default;

 protected:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

enum class FlowKind { sparse, dense, integrated, external_refined };

inline std::string_view to_string(FlowKind kind) {
  switch (kind) {
    case FlowKind::sparse: return "sparse";
    case FlowKind::dense: return "dense";
    case FlowKind::integrated: return "integrated";
    case FlowKind::external_refined: return "external_refined";
  }
  return "unknown";
}

// Per-pixel (u, v) displacement in pixels per frame.
class FlowField : public Raster<Vec2> {
 public:
  FlowField() = default;
  FlowField(int width, int height, FlowKind kind = FlowKind::dense, Vec2 fill = {})
      : Raster<Vec2>(width, height, fill), kind_(kind) {}

  FlowKind kind() const noexcept { return kind_; }
  void set_kind(FlowKind kind) noexcept { kind_ = kind; }

  bool is_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Vec2 v) { return fluidanim::is_finite(v); });
  }

  // Bilinear sample with coordinates clamped to the pixel-centre grid
  // [0, W-1] x [0, H-1]. A constant field samples back exactly.
  Vec2 sample(double x, double y) const {
    const double cx = std::clamp(x, 0.0, static_cast<double>(width_ - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(height_ - 1));
    const int x0 = static_cast<int>(std::floor(cx));
    const int y0 = static_cast<int>(std::floor(cy));
    const int x1 = std::min(x0 + 1, width_ - 1);
    const int y1 = std::min(y0 + 1, height_ - 1);
    const double fx = cx - x0;
    const double fy = cy - y0;
    auto lerp = [](Vec2 a, Vec2 b, double f) { return Vec2{a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)}; };
    return lerp(lerp(at(x0, y0), at(x1, y0), fx), lerp(at(x0, y1), at(x1, y1), fx), fy);
  }

  friend bool operator==(const FlowField&, const FlowField&) = default;

 private:
  FlowKind kind_ = FlowKind::dense;
};

// Region selector; every value lies in [0, 1].
class MaskMap : public Raster<float> {
 public:
  MaskMap() = default;
  MaskMap(int width, int height, float fill = 0.0f) : Raster<float>(width, height, clamp01(fill)) {}

  float get(int x, int y) const { return at(x, y); }
  void set(int x, int y, float v) { Raster<float>::at(x, y) = clamp01(v); }

  // The mutable accessors of Raster would bypass clamping.
  const float& at(int x, int y) const { return Raster<float>::at(x, y); }
  const float& operator[](std::size_t i) const { return data_[i]; }
  std::span<const float> values() const noexcept { return data_; }
  std::span<const float> row(int y) const { return Raster<float>::row(y); }

  std::size_t count_nonzero() const {
    return static_cast<std::size_t>(std::count_if(data_.begin(), data_.end(), [](float v) { return v > 0.0f; }));
  }

  friend bool operator==(const MaskMap&, const MaskMap&) = default;

 private:
  static float clamp01(float v) { return std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f); }
};

// H x W x C float raster. Colour values use the [0, 1] range (1 = 255 for
// 8-bit sources); pyramid levels carry the same channel count as level 0.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int width, int height, int channels, float fill = 0.0f)
      : width_(width), height_(height), channels_(channels) {
    if (width < 0 || height < 0) throw ValidationError("", "negative image dimensions");
    if (channels < 1) throw ValidationError("channels", "image needs at least one channel");
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width_) * height_; }

  float* pixel(int x, int y) { return data_.data() + offset(x, y); }
  const float* pixel(int x, int y) const { return data_.data() + offset(x, y); }
  float& at(int x, int y, int c) { return data_[offset(x, y) + c]; }
  float at(int x, int y, int c) const { return data_[offset(x, y) + c]; }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }

  bool same_shape(int width, int height) const noexcept { return width_ == width && height_ == height; }
  template <class R>
  bool same_shape(const R& other) const noexcept {
    return same_shape(other.width(), other.height());
  }

  bool is_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  std::size_t offset(int x, int y) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * static_cast<std::size_t>(channels_);
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

// Per-pixel splatting importance Z.
using ImportanceMap = Raster<float>;

// One user arrow. The contributed flow vector is (end - start) * speed.
struct Hint {
  Vec2 start;
  Vec2 end;
  double speed = 1.0;

  Vec2 flow() const { return (end - start) * speed; }

  friend bool operator==(const Hint&, const Hint&) = default;
};

}  // namespace fluidanim
