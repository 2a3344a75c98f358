#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "fluidanim/error.hpp"
#include "fluidanim/types.hpp"

namespace fluidanim {

// Gaussian pyramid; level r is ceil(H / 2^r) x ceil(W / 2^r).
struct Pyramid {
  std::vector<ImageBuffer> levels;

  int level_count() const noexcept { return static_cast<int>(levels.size()); }
  const ImageBuffer& operator[](int r) const { return levels[static_cast<std::size_t>(r)]; }
};

inline int half_size(int n) { return (n + 1) / 2; }

// [1 4 6 4 1] / 16 separable blur with clamped borders, then every other pixel.
inline ImageBuffer pyr_down(const ImageBuffer& src) {
  static constexpr std::array<double, 5> kTaps{1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  const int w = src.width(), h = src.height(), c = src.channels();
  const int ow = half_size(w), oh = half_size(h);

  // Horizontal pass at decimated columns only.
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h * c, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int ox = 0; ox < ow; ++ox) {
      double* out = tmp.data() + (static_cast<std::size_t>(y) * ow + ox) * c;
      for (int k = -2; k <= 2; ++k) {
        const float* p = src.pixel(std::clamp(2 * ox + k, 0, w - 1), y);
        for (int ch = 0; ch < c; ++ch) out[ch] += kTaps[k + 2] * p[ch];
      }
    }
  }
  ImageBuffer dst(ow, oh, c);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      float* out = dst.pixel(ox, oy);
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int k = -2; k <= 2; ++k)
          acc += kTaps[k + 2] * tmp[(static_cast<std::size_t>(std::clamp(2 * oy + k, 0, h - 1)) * ow + ox) * c + ch];
        out[ch] = static_cast<float>(acc);
      }
    }
  }
  return dst;
}

inline Pyramid build_pyramid(const ImageBuffer& image, int levels) {
  if (levels < 1) throw ValidationError("pyramid_levels", "pyramid needs at least one level");
  if (image.empty()) throw ValidationError("image", "image is empty");
  Pyramid p;
  p.levels.reserve(static_cast<std::size_t>(levels));
  p.levels.push_back(image);
  for (int r = 1; r < levels; ++r) p.levels.push_back(pyr_down(p.levels.back()));
  return p;
}

// 2x2 average pool (partial windows at odd borders) with vectors halved.
inline FlowField pyr_down_flow(const FlowField& f) {
  const int w = f.width(), h = f.height();
  FlowField out(half_size(w), half_size(h), f.kind());
  for (int oy = 0; oy < out.height(); ++oy) {
    for (int ox = 0; ox < out.width(); ++ox) {
      Vec2 sum;
      int n = 0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const int x = 2 * ox + dx, y = 2 * oy + dy;
          if (x < w && y < h) {
            sum = sum + f.at(x, y);
            ++n;
          }
        }
      }
      out.at(ox, oy) = sum * (0.5 / n);
    }
  }
  return out;
}

// Bilinear resample with pixel-centre alignment and clamped borders.
inline ImageBuffer resize_bilinear(const ImageBuffer& src, int width, int height) {
  if (src.same_shape(width, height)) return src;
  ImageBuffer dst(width, height, src.channels());
  const double sx = static_cast<double>(src.width()) / width;
  const double sy = static_cast<double>(src.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double ay = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double ax = fx - x0;
      float* out = dst.pixel(x, y);
      for (int c = 0; c < src.channels(); ++c) {
        const double top = src.at(x0, y0, c) + ax * (src.at(x1, y0, c) - src.at(x0, y0, c));
        const double bottom = src.at(x0, y1, c) + ax * (src.at(x1, y1, c) - src.at(x0, y1, c));
        out[c] = static_cast<float>(top + ay * (bottom - top));
      }
    }
  }
  return dst;
}

// Resample for output resolution changes: halve with pyr_down while the
// source is more than twice the target, then bilinear.
inline ImageBuffer resize_image(const ImageBuffer& src, int width, int height) {
  if (width <= 0 || height <= 0) throw ValidationError("resolution", "output resolution must be positive");
  ImageBuffer cur = src;
  while (cur.width() >= 2 * width && cur.height() >= 2 * height) cur = pyr_down(cur);
  return resize_bilinear(cur, width, height);
}

inline MaskMap resize_mask(const MaskMap& mask, int width, int height) {
  if (mask.same_shape(width, height)) return mask;
  ImageBuffer tmp(mask.width(), mask.height(), 1);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) tmp.at(x, y, 0) = mask.at(x, y);
  const ImageBuffer scaled = resize_image(tmp, width, height);
  MaskMap out(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.set(x, y, scaled.at(x, y, 0));
  return out;
}

inline FlowField resize_flow(const FlowField& f, int width, int height) {
  if (f.same_shape(width, height)) return f;
  ImageBuffer tmp(f.width(), f.height(), 2);
  for (int y = 0; y < f.height(); ++y) {
    for (int x = 0; x < f.width(); ++x) {
      tmp.at(x, y, 0) = static_cast<float>(f.at(x, y).x);
      tmp.at(x, y, 1) = static_cast<float>(f.at(x, y).y);
    }
  }
  const ImageBuffer scaled = resize_image(tmp, width, height);
  const double sx = static_cast<double>(width) / f.width();
  const double sy = static_cast<double>(height) / f.height();
  FlowField out(width, height, f.kind());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.at(x, y) = {scaled.at(x, y, 0) * sx, scaled.at(x, y, 1) * sy};
  return out;
}

}  // namespace fluidanim
