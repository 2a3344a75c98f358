#pragma once

// Sparse and dense Eulerian flow construction from user hints, and Euler
// integration of a constant flow field over time.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "fluidanim/error.hpp"
#include "fluidanim/parallel.hpp"
#include "fluidanim/types.hpp"

namespace fluidanim {

struct FlowParams {
  // Gaussian falloff of hint influence in pixels; unset means
  // default_sigma() of the image.
  std::optional<double> sigma;
  int n_frames = 60;
  double speed_scale = 1.0;

  friend bool operator==(const FlowParams&, const FlowParams&) = default;
};

inline double default_sigma(int width, int height) { return 0.1 * std::hypot(width, height); }

inline double resolve_sigma(const FlowParams& params, int width, int height) {
  const double sigma = params.sigma.value_or(default_sigma(width, height));
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("params.sigma", "sigma must be positive and finite");
  return sigma;
}

inline void validate(const FlowParams& params) {
  if (params.sigma && (!(*params.sigma > 0.0) || !std::isfinite(*params.sigma)))
    throw ValidationError("params.sigma", "sigma must be positive and finite");
  if (params.n_frames < 1) throw ValidationError("params.n_frames", "n_frames must be at least 1");
  if (!std::isfinite(params.speed_scale)) throw ValidationError("params.speed_scale", "speed_scale must be finite");
}

namespace detail {

inline std::string hint_path(std::size_t i) { return "hints[" + std::to_string(i) + "]"; }

inline bool in_bounds(Vec2 p, int width, int height) {
  return p.x >= 0.0 && p.y >= 0.0 && p.x < width && p.y < height;
}

// Nearest pixel to a continuous in-bounds coordinate.
inline std::pair<int, int> rasterize(Vec2 p, int width, int height) {
  const int x = std::min(static_cast<int>(std::floor(p.x + 0.5)), width - 1);
  const int y = std::min(static_cast<int>(std::floor(p.y + 0.5)), height - 1);
  return {x, y};
}

}  // namespace detail

inline void validate_hints(std::span<const Hint> hints, int width, int height) {
  for (std::size_t i = 0; i < hints.size(); ++i) {
    const Hint& h = hints[i];
    const std::string path = detail::hint_path(i);
    if (!is_finite(h.start) || !detail::in_bounds(h.start, width, height))
      throw ValidationError(path + ".start", "outside image bounds " + std::to_string(width) + "x" + std::to_string(height));
    if (!is_finite(h.end) || !detail::in_bounds(h.end, width, height))
      throw ValidationError(path + ".end", "outside image bounds " + std::to_string(width) + "x" + std::to_string(height));
    if (!std::isfinite(h.speed) || h.speed < 0.0) throw ValidationError(path + ".speed", "speed must be finite and >= 0");
  }
}

// F_S: each hint's flow vector at its (rounded) start pixel, zero elsewhere.
inline FlowField sparse_flow_from_hints(std::span<const Hint> hints, int width, int height) {
  if (width <= 0 || height <= 0) throw ValidationError("", "image dimensions must be positive");
  validate_hints(hints, width, height);
  FlowField out(width, height, FlowKind::sparse);
  std::map<std::pair<int, int>, std::size_t> occupied;
  for (std::size_t i = 0; i < hints.size(); ++i) {
    const auto pixel = detail::rasterize(hints[i].start, width, height);
    if (auto [it, inserted] = occupied.emplace(pixel, i); !inserted)
      throw ValidationError(detail::hint_path(i), "start rounds to the same pixel as " + detail::hint_path(it->second));
    out.at(pixel.first, pixel.second) = hints[i].flow();
  }
  return out;
}

// F_D: Gaussian-weighted average of the hint flows at every masked pixel,
//   F_D(i) = sum_j w_ij f_j / sum_j w_ij,  w_ij = exp(-(|p_i - s_j| / sigma)^2),
// zero where the mask is zero. Weights are evaluated relative to the nearest
// hint, which leaves the ratio unchanged but keeps it defined far from all
// hints. Hints are summed in a canonical order so the result does not depend
// on the order of `hints`.
inline FlowField dense_flow_from_hints(std::span<const Hint> hints, const MaskMap& mask, const FlowParams& params,
                                       int workers = 1) {
  if (mask.empty()) throw ValidationError("mask", "mask is empty");
  if (hints.empty()) throw ValidationError("hints", "no hints");
  const int width = mask.width();
  const int height = mask.height();
  validate_hints(hints, width, height);
  const double sigma = resolve_sigma(params, width, height);
  const double inv_sigma2 = 1.0 / (sigma * sigma);

  struct Source {
    Vec2 pos;
    Vec2 flow;
  };
  std::vector<Source> sources;
  sources.reserve(hints.size());
  for (const Hint& h : hints) sources.push_back({h.start, h.flow()});
  std::sort(sources.begin(), sources.end(), [](const Source& a, const Source& b) {
    return std::tie(a.pos.x, a.pos.y, a.flow.x, a.flow.y) < std::tie(b.pos.x, b.pos.y, b.flow.x, b.flow.y);
  });

  FlowField out(width, height, FlowKind::dense);
  parallel_for(0, height, workers, [&](int y_begin, int y_end) {
    std::vector<double> d2(sources.size());
    for (int y = y_begin; y < y_end; ++y) {
      for (int x = 0; x < width; ++x) {
        if (!(mask.at(x, y) > 0.0f)) continue;
        double d2_min = INFINITY;
        for (std::size_t j = 0; j < sources.size(); ++j) {
          const double dx = x - sources[j].pos.x;
          const double dy = y - sources[j].pos.y;
          d2[j] = dx * dx + dy * dy;
          d2_min = std::min(d2_min, d2[j]);
        }
        double num_u = 0.0, num_v = 0.0, den = 0.0;
        for (std::size_t j = 0; j < sources.size(); ++j) {
          const double w = std::exp(-(d2[j] - d2_min) * inv_sigma2);
          num_u += w * sources[j].flow.x;
          num_v += w * sources[j].flow.y;
          den += w;
        }
        out.at(x, y) = {num_u / den, num_v / den};
      }
    }
  });
  return out;
}

namespace detail {

inline void check_integrable(const FlowField& m_f) {
  if (m_f.empty()) throw ValidationError("m_f", "flow field is empty");
  if (!m_f.is_finite()) throw ValidationError("m_f", "flow field contains non-finite values");
}

// One Euler step: next(i) = cur(i) + M_F(i + cur(i)).
inline void euler_step(const FlowField& m_f, const FlowField& cur, FlowField& next, int workers) {
  parallel_for(0, m_f.height(), workers, [&](int y_begin, int y_end) {
    for (int y = y_begin; y < y_end; ++y) {
      for (int x = 0; x < m_f.width(); ++x) {
        const Vec2 d = cur.at(x, y);
        next.at(x, y) = d + m_f.sample(x + d.x, y + d.y);
      }
    }
  });
}

}  // namespace detail

// F_{0->t} by t Euler steps of m_f; F_{0->0} = 0, F_{0->1} = m_f.
// Backward integration is euler_integrate(negate(m_f), t).
inline FlowField euler_integrate(const FlowField& m_f, int t, int workers = 1) {
  if (t < 0) throw ValidationError("t", "frame index must be >= 0");
  detail::check_integrable(m_f);
  FlowField cur(m_f.width(), m_f.height(), FlowKind::integrated);
  FlowField next = cur;
  for (int step = 0; step < t; ++step) {
    detail::euler_step(m_f, cur, next, workers);
    std::swap(cur, next);
  }
  return cur;
}

// [F_{0->0}, ..., F_{0->n}] in one incremental pass.
inline std::vector<FlowField> euler_integrate_sequence(const FlowField& m_f, int n, int workers = 1) {
  if (n < 0) throw ValidationError("n", "frame count must be >= 0");
  detail::check_integrable(m_f);
  std::vector<FlowField> seq;
  seq.reserve(static_cast<std::size_t>(n) + 1);
  seq.emplace_back(m_f.width(), m_f.height(), FlowKind::integrated);
  for (int t = 1; t <= n; ++t) {
    FlowField next(m_f.width(), m_f.height(), FlowKind::integrated);
    detail::euler_step(m_f, seq.back(), next, workers);
    seq.push_back(std::move(next));
  }
  return seq;
}

inline FlowField scale(const FlowField& f, double s) {
  if (!std::isfinite(s)) throw ValidationError("scale", "scale factor must be finite");
  FlowField out = f;
  for (Vec2& v : out.values()) v = v * s;
  return out;
}

inline FlowField negate(const FlowField& f) {
  FlowField out = f;
  for (Vec2& v : out.values()) v = {-v.x, -v.y};
  return out;
}

}  // namespace fluidanim
