#pragma once

// Forward warping by softmax splatting, and the symmetric combination of a
// forward-warped first frame with a backward-warped last frame.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "fluidanim/error.hpp"
#include "fluidanim/parallel.hpp"
#include "fluidanim/types.hpp"

namespace fluidanim {

// Denominators at or below this mark a void pixel.
inline constexpr double kVoidEpsilon = 1e-8;

struct SplatResult {
  ImageBuffer colors;       // normalized; all-zero at voids
  Raster<double> coverage;  // sum of exp(Z - max Z) * bilinear weight received

  bool is_void(int x, int y) const { return coverage.at(x, y) <= kVoidEpsilon; }
};

// How symmetric splatting weighs the two branches at time t of n.
enum class SymmetricWeighting {
  starts_at_first,  // w_first = 1 - t/n, w_last = t/n: frame 0 is the first image
  literal,          // w_first = t/n, w_last = 1 - t/n, as the formula is printed
};

inline ImportanceMap zero_importance(int width, int height) { return ImportanceMap(width, height, 0.0f); }

// Z = gamma * luma (Rec. 601 for three or more channels, the mean otherwise).
inline ImportanceMap luminance_importance(const ImageBuffer& image, double gamma) {
  ImportanceMap z(image.width(), image.height(), 0.0f);
  if (gamma == 0.0) return z;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const float* p = image.pixel(x, y);
      double luma = 0.0;
      if (image.channels() >= 3) {
        luma = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
      } else {
        for (int c = 0; c < image.channels(); ++c) luma += p[c];
        luma /= image.channels();
      }
      z.at(x, y) = static_cast<float>(gamma * luma);
    }
  }
  return z;
}

namespace detail {

inline void check_splat_inputs(const ImageBuffer& src, const FlowField& flow, const ImportanceMap& z) {
  if (!flow.same_shape(src.width(), src.height()))
    throw ValidationError("flow", "flow dimensions do not match the source raster");
  if (!z.same_shape(src.width(), src.height()))
    throw ValidationError("z", "importance map dimensions do not match the source raster");
  if (!flow.is_finite()) throw ValidationError("flow", "flow contains non-finite values");
  for (float v : z.values())
    if (!std::isfinite(v)) throw ValidationError("z", "importance map contains non-finite values");
}

// exp(Z - shift) per pixel.
inline std::vector<double> softmax_weights(const ImportanceMap& z, double shift) {
  std::vector<double> w(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) w[i] = std::exp(static_cast<double>(z[i]) - shift);
  return w;
}

inline double max_importance(const ImportanceMap& z) {
  double m = -std::numeric_limits<double>::infinity();
  for (float v : z.values()) m = std::max(m, static_cast<double>(v));
  return std::isfinite(m) ? m : 0.0;
}

// Numerator (C doubles per pixel) and denominator accumulators.
struct Accumulator {
  int width = 0, height = 0, channels = 0;
  std::vector<double> num;
  std::vector<double> den;

  Accumulator(int w, int h, int c)
      : width(w), height(h), channels(c), num(static_cast<std::size_t>(w) * h * c, 0.0),
        den(static_cast<std::size_t>(w) * h, 0.0) {}

  void merge(const Accumulator& other) {
    for (std::size_t i = 0; i < num.size(); ++i) num[i] += other.num[i];
    for (std::size_t i = 0; i < den.size(); ++i) den[i] += other.den[i];
  }
};

// Scatters source rows [y_begin, y_end) into `acc`. Each source lands at
// p + flow(p) and is split over its four neighbouring pixels with bilinear
// weights times weight[p] * branch_weight. Taps are visited in the order
// (x0,y0), (x1,y0), (x0,y1), (x1,y1); zero-weight and off-grid taps are
// skipped.
inline void scatter_rows(const ImageBuffer& src, const FlowField& flow, std::span<const double> weight,
                         double branch_weight, int y_begin, int y_end, Accumulator& acc) {
  if (branch_weight == 0.0) return;
  const int w = src.width();
  const int h = src.height();
  const int c = src.channels();
  for (int y = y_begin; y < y_end; ++y) {
    const Vec2* flow_row = flow.row(y).data();
    const double* weight_row = weight.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      const double tx = x + flow_row[x].x;
      const double ty = y + flow_row[x].y;
      if (!(tx > -1.0 && ty > -1.0 && tx < w && ty < h)) continue;
      const int x0 = static_cast<int>(std::floor(tx));
      const int y0 = static_cast<int>(std::floor(ty));
      const double fx = tx - x0;
      const double fy = ty - y0;
      const double base = weight_row[x] * branch_weight;
      const float* value = src.pixel(x, y);
      const std::array<int, 4> xs{x0, x0 + 1, x0, x0 + 1};
      const std::array<int, 4> ys{y0, y0, y0 + 1, y0 + 1};
      const std::array<double, 4> bil{(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy};
      for (int k = 0; k < 4; ++k) {
        if (bil[k] <= 0.0 || xs[k] < 0 || ys[k] < 0 || xs[k] >= w || ys[k] >= h) continue;
        const double wk = bil[k] * base;
        const std::size_t p = static_cast<std::size_t>(ys[k]) * w + xs[k];
        double* num = acc.num.data() + p * c;
        for (int ch = 0; ch < c; ++ch) num[ch] += wk * value[ch];
        acc.den[p] += wk;
      }
    }
  }
}

inline SplatResult normalize(const Accumulator& acc) {
  SplatResult out{ImageBuffer(acc.width, acc.height, acc.channels), Raster<double>(acc.width, acc.height)};
  auto colors = out.colors.values();
  for (std::size_t p = 0; p < acc.den.size(); ++p) {
    const double den = acc.den[p];
    out.coverage[p] = den;
    if (den <= kVoidEpsilon) continue;
    for (int ch = 0; ch < acc.channels; ++ch)
      colors[p * acc.channels + ch] = static_cast<float>(acc.num[p * acc.channels + ch] / den);
  }
  return out;
}

struct Branch {
  const ImageBuffer* src;
  const FlowField* flow;
  double weight;
};

// Joint accumulation of several branches sharing one denominator. Sources
// are split into row bands, one private accumulator per band, merged in band
// order; with one worker the order is exactly that of brute_force_splat.
inline SplatResult splat_branches(std::span<const Branch> branches, std::span<const double> weight, int workers) {
  const ImageBuffer& first = *branches.front().src;
  const int h = first.height();
  const int bands = effective_workers(h, workers);
  std::vector<Accumulator> partial(bands, Accumulator(first.width(), h, first.channels()));
  parallel_for(0, bands, bands, [&](int band_begin, int band_end) {
    for (int b = band_begin; b < band_end; ++b) {
      const int y0 = static_cast<int>(static_cast<long long>(h) * b / bands);
      const int y1 = static_cast<int>(static_cast<long long>(h) * (b + 1) / bands);
      for (const Branch& br : branches) scatter_rows(*br.src, *br.flow, weight, br.weight, y0, y1, partial[b]);
    }
  });
  for (int b = 1; b < bands; ++b) partial[0].merge(partial[b]);
  return normalize(partial[0]);
}

}  // namespace detail

// Softmax splatting of `src` along `flow`: every target pixel receives the
// exp(Z)-weighted average of the source values that land on it.
inline SplatResult softmax_splat(const ImageBuffer& src, const FlowField& flow, const ImportanceMap& z,
                                 int workers = 1) {
  detail::check_splat_inputs(src, flow, z);
  const auto weight = detail::softmax_weights(z, detail::max_importance(z));
  const detail::Branch branch{&src, &flow, 1.0};
  return detail::splat_branches(std::span(&branch, 1), weight, workers);
}

// Reference scatter: one source pixel at a time, no banding, no shared
// helpers beyond the input checks. Test oracle for softmax_splat.
inline SplatResult brute_force_splat(const ImageBuffer& src, const FlowField& flow, const ImportanceMap& z) {
  detail::check_splat_inputs(src, flow, z);
  const int w = src.width(), h = src.height(), c = src.channels();
  double zmax = -INFINITY;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) zmax = std::max(zmax, static_cast<double>(z.at(x, y)));
  if (!std::isfinite(zmax)) zmax = 0.0;

  std::vector<double> num(static_cast<std::size_t>(w) * h * c, 0.0);
  std::vector<double> den(static_cast<std::size_t>(w) * h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double tx = x + flow.at(x, y).x;
      const double ty = y + flow.at(x, y).y;
      const double e = std::exp(static_cast<double>(z.at(x, y)) - zmax);
      const double x0 = std::floor(tx), y0 = std::floor(ty);
      for (int dy = 0; dy <= 1; ++dy) {
        for (int dx = 0; dx <= 1; ++dx) {
          const double wx = dx ? tx - x0 : 1.0 - (tx - x0);
          const double wy = dy ? ty - y0 : 1.0 - (ty - y0);
          const double bil = wx * wy;
          const double px = x0 + dx, py = y0 + dy;
          if (bil <= 0.0 || px < 0 || py < 0 || px >= w || py >= h) continue;
          const auto p = static_cast<std::size_t>(py) * w + static_cast<std::size_t>(px);
          const double wk = bil * (e * 1.0);
          for (int ch = 0; ch < c; ++ch) num[p * c + ch] += wk * src.at(x, y, ch);
          den[p] += wk;
        }
      }
    }
  }
  SplatResult out{ImageBuffer(w, h, c), Raster<double>(w, h)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto p = static_cast<std::size_t>(y) * w + x;
      out.coverage.at(x, y) = den[p];
      if (den[p] > kVoidEpsilon)
        for (int ch = 0; ch < c; ++ch) out.colors.at(x, y, ch) = static_cast<float>(num[p * c + ch] / den[p]);
    }
  }
  return out;
}

inline std::pair<double, double> symmetric_weights(int t, int n, SymmetricWeighting weighting) {
  const double a = static_cast<double>(t) / n;
  return weighting == SymmetricWeighting::starts_at_first ? std::pair{1.0 - a, a} : std::pair{a, 1.0 - a};
}

// Splats `first` along fwd_flow (F_{0->t}) and `last` along bwd_flow
// (F_{0->t-n}) into one shared numerator and denominator, the branches
// weighted by (w_first, w_last). The same Z weights both branches.
inline SplatResult weighted_symmetric_splat(const ImageBuffer& first, const ImageBuffer& last, const FlowField& fwd_flow,
                                            const FlowField& bwd_flow, double w_first, double w_last,
                                            const ImportanceMap& z, int workers = 1) {
  detail::check_splat_inputs(first, fwd_flow, z);
  detail::check_splat_inputs(last, bwd_flow, z);
  if (first.channels() != last.channels() || !first.same_shape(last))
    throw ValidationError("last", "first and last rasters differ in shape");
  if (!(w_first >= 0.0 && w_last >= 0.0)) throw ValidationError("weights", "branch weights must be >= 0");
  const auto weight = detail::softmax_weights(z, detail::max_importance(z));
  const std::array<detail::Branch, 2> branches{detail::Branch{&first, &fwd_flow, w_first},
                                               detail::Branch{&last, &bwd_flow, w_last}};
  return detail::splat_branches(branches, weight, workers);
}

inline SplatResult symmetric_splat(const ImageBuffer& first, const ImageBuffer& last, const FlowField& fwd_flow,
                                   const FlowField& bwd_flow, int t, int n, const ImportanceMap& z,
                                   SymmetricWeighting weighting = SymmetricWeighting::starts_at_first,
                                   int workers = 1) {
  if (n < 1) throw ValidationError("n", "frame count must be >= 1");
  if (t < 0 || t > n) throw ValidationError("t", "t must lie in [0, n]");
  const auto [w_first, w_last] = symmetric_weights(t, n, weighting);
  return weighted_symmetric_splat(first, last, fwd_flow, bwd_flow, w_first, w_last, z, workers);
}

}  // namespace fluidanim
