#pragma once

// Benchmark heuristics: masks and hints derived from a ground-truth average
// flow, flow / frame PSNR, and the hint -> dense flow evaluation loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fluidanim/error.hpp"
#include "fluidanim/flow_core.hpp"
#include "fluidanim/parallel.hpp"
#include "fluidanim/types.hpp"

namespace fluidanim {

// Threshold multiplier on the mean squared flow. The literal benchmark value
// is kLiteralMaskFactor; kDefaultMaskFactor keeps most moving regions.
inline constexpr double kDefaultMaskFactor = 0.1;
inline constexpr double kLiteralMaskFactor = 10.0;

inline constexpr double kPsnrCap = 99.0;

struct GeneratedMask {
  MaskMap mask;
  std::string warning;  // non-empty when the mask came out empty
};

// Keeps pixel i iff |flow(i)|^2 >= m_factor * mean |flow|^2. The comparison
// carries a 1e-12 relative slack so a uniform field is kept whole at
// m_factor = 1 regardless of summation rounding.
inline GeneratedMask generate_mask(const FlowField& avg_flow, double m_factor = kDefaultMaskFactor) {
  if (avg_flow.empty()) throw ValidationError("avg_flow", "flow field is empty");
  if (!avg_flow.is_finite()) throw ValidationError("avg_flow", "flow field contains non-finite values");
  if (!(m_factor >= 0.0) || !std::isfinite(m_factor)) throw ValidationError("m_factor", "m_factor must be >= 0");

  std::vector<double> sq(avg_flow.size());
  for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = avg_flow[i].x * avg_flow[i].x + avg_flow[i].y * avg_flow[i].y;
  const double mean = std::accumulate(sq.begin(), sq.end(), 0.0) / static_cast<double>(sq.size());

  GeneratedMask out{MaskMap(avg_flow.width(), avg_flow.height()), {}};
  if (!(mean > 0.0)) {
    out.warning = "flow is zero everywhere; mask is empty";
    return out;
  }
  const double threshold = m_factor * mean * (1.0 - 1e-12);
  for (int y = 0; y < avg_flow.height(); ++y)
    for (int x = 0; x < avg_flow.width(); ++x)
      if (sq[static_cast<std::size_t>(y) * avg_flow.width() + x] >= threshold) out.mask.set(x, y, 1.0f);
  if (out.mask.count_nonzero() == 0) out.warning = "no pixel reaches the threshold; mask is empty";
  return out;
}

struct HintExtractionOptions {
  int iterations = 100;
  std::uint64_t seed = 0x5eedULL;
  // Cluster on (x, y) only instead of (x, y, u, v).
  bool position_only = false;
};

namespace detail {

struct Samples {
  std::vector<std::pair<int, int>> pixels;
  std::vector<Vec2> flows;
  std::vector<double> features;  // dims per sample, standardized
  int dims = 4;

  std::size_t size() const { return pixels.size(); }
  const double* feature(std::size_t i) const { return features.data() + i * dims; }
};

inline double sq_dist(const double* a, const double* b, int dims) {
  double d = 0.0;
  for (int k = 0; k < dims; ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
  return d;
}

inline Samples masked_samples(const FlowField& flow, const MaskMap& mask, bool position_only) {
  Samples s;
  s.dims = position_only ? 2 : 4;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!(mask.at(x, y) > 0.0f)) continue;
      s.pixels.emplace_back(x, y);
      s.flows.push_back(flow.at(x, y));
    }
  }
  const std::size_t n = s.size();
  s.features.resize(n * s.dims);
  for (std::size_t i = 0; i < n; ++i) {
    double* f = s.features.data() + i * s.dims;
    f[0] = s.pixels[i].first;
    f[1] = s.pixels[i].second;
    if (!position_only) {
      f[2] = s.flows[i].x;
      f[3] = s.flows[i].y;
    }
  }
  // Coordinates and flow are standardized as groups so both carry unit
  // variance; a constant group contributes nothing.
  auto standardize = [&](int k0, int k1) {
    double mean[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i)
      for (int k = k0; k < k1; ++k) mean[k - k0] += s.features[i * s.dims + k];
    for (double& m : mean) m /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (int k = k0; k < k1; ++k) {
        const double d = s.features[i * s.dims + k] - mean[k - k0];
        var += d * d;
      }
    var /= static_cast<double>(n);
    const double inv = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (int k = k0; k < k1; ++k) s.features[i * s.dims + k] = (s.features[i * s.dims + k] - mean[k - k0]) * inv;
  };
  standardize(0, 2);
  if (!position_only) standardize(2, 4);
  return s;
}

// k-means++ seeding followed by Lloyd iterations. Returns the centres.
inline std::vector<double> kmeans(const Samples& s, int k, const HintExtractionOptions& options) {
  const std::size_t n = s.size();
  const int dims = s.dims;
  std::mt19937_64 rng(options.seed);
  std::vector<double> centers;
  centers.reserve(static_cast<std::size_t>(k) * dims);

  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  centers.insert(centers.end(), s.feature(first), s.feature(first) + dims);
  for (int c = 1; c < k; ++c) {
    const double* last = centers.data() + static_cast<std::size_t>(c - 1) * dims;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(s.feature(i), last, dims));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        if (r < d2[i]) {
          pick = i;
          break;
        }
        r -= d2[i];
      }
      while (d2[pick] <= 0.0 && pick > 0) --pick;
    } else {
      // Fewer distinct points than clusters: duplicate an existing centre.
      pick = first;
    }
    centers.insert(centers.end(), s.feature(pick), s.feature(pick) + dims);
  }

  std::vector<int> assign(n, -1);
  for (int it = 0; it < options.iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = sq_dist(s.feature(i), centers.data() + static_cast<std::size_t>(c) * dims, dims);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    std::vector<double> sum(static_cast<std::size_t>(k) * dims, 0.0);
    std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[static_cast<std::size_t>(assign[i])];
      for (int d = 0; d < dims; ++d) sum[static_cast<std::size_t>(assign[i]) * dims + d] += s.feature(i)[d];
    }
    for (int c = 0; c < k; ++c) {
      if (count[static_cast<std::size_t>(c)] == 0) continue;  // empty cluster keeps its centre
      for (int d = 0; d < dims; ++d)
        centers[static_cast<std::size_t>(c) * dims + d] =
            sum[static_cast<std::size_t>(c) * dims + d] / static_cast<double>(count[static_cast<std::size_t>(c)]);
    }
    if (!changed && it > 0) break;
  }
  return centers;
}

// Largest fraction of `flow` that keeps start + fraction * flow inside
// [0, W-1] x [0, H-1]; 0 when the pixel sits on the border facing outward.
inline double representable_fraction(Vec2 start, Vec2 flow, int width, int height) {
  double f = 1.0;
  auto limit = [&f](double p, double d, double hi) {
    if (p + d > hi) f = std::min(f, (hi - p) / d);
    if (p + d < 0.0) f = std::min(f, -p / d);
  };
  limit(start.x, flow.x, width - 1.0);
  limit(start.y, flow.y, height - 1.0);
  return std::max(f, 0.0);
}

}  // namespace detail

// One hint per k-means cluster of the masked pixels, placed at the masked
// pixel nearest the cluster centre and carrying avg_flow there. Hints whose
// endpoint would leave the image are shortened with a compensating speed,
// so (end - start) * speed reproduces the pixel's flow.
inline std::vector<Hint> extract_hints(const FlowField& avg_flow, const MaskMap& mask, int k,
                                       const HintExtractionOptions& options = {}) {
  if (k < 1) throw ValidationError("k", "k must be at least 1");
  if (!mask.same_shape(avg_flow)) throw ValidationError("mask", "mask dimensions do not match the flow");
  if (options.iterations < 1) throw ValidationError("iterations", "iterations must be at least 1");
  const detail::Samples s = detail::masked_samples(avg_flow, mask, options.position_only);
  if (s.size() < static_cast<std::size_t>(k))
    throw ValidationError("mask", "mask has " + std::to_string(s.size()) + " pixels, fewer than k = " + std::to_string(k));

  const std::vector<double> centers = detail::kmeans(s, k, options);
  std::vector<bool> used(s.size(), false);
  std::vector<Hint> hints;
  hints.reserve(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    const double* center = centers.data() + static_cast<std::size_t>(c) * s.dims;
    std::size_t best = s.size();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (used[i]) continue;
      const Vec2 start{static_cast<double>(s.pixels[i].first), static_cast<double>(s.pixels[i].second)};
      const Vec2 f = s.flows[i];
      if ((f.x != 0.0 || f.y != 0.0) &&
          detail::representable_fraction(start, f, avg_flow.width(), avg_flow.height()) <= 0.0)
        continue;
      const double d = detail::sq_dist(s.feature(i), center, s.dims);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    if (best == s.size()) throw ValidationError("mask", "not enough pixels can carry a hint");
    used[best] = true;
    const Vec2 start{static_cast<double>(s.pixels[best].first), static_cast<double>(s.pixels[best].second)};
    const Vec2 f = s.flows[best];
    const double fraction = detail::representable_fraction(start, f, avg_flow.width(), avg_flow.height());
    if (fraction >= 1.0)
      hints.push_back({start, start + f, 1.0});
    else
      hints.push_back({start, start + f * fraction, 1.0 / fraction});
  }
  return hints;
}

inline double mse(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return a.empty() ? 0.0 : acc / static_cast<double>(a.size());
}

inline double psnr_from_mse(double mse_value, double peak) {
  if (!(mse_value > 0.0)) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse_value));
}

inline double flow_mse(const FlowField& a, const FlowField& b) {
  if (!a.same_shape(b)) throw ValidationError("b", "flow dimensions differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double du = a[i].x - b[i].x, dv = a[i].y - b[i].y;
    acc += du * du + dv * dv;
  }
  return a.empty() ? 0.0 : acc / (2.0 * static_cast<double>(a.size()));
}

// Largest absolute component over both fields.
inline double joint_flow_peak(const FlowField& a, const FlowField& b) {
  double peak = 0.0;
  for (const FlowField* f : {&a, &b})
    for (Vec2 v : f->values()) peak = std::max({peak, std::abs(v.x), std::abs(v.y)});
  return peak;
}

// 10 log10(peak^2 / MSE) over both channels, capped at kPsnrCap (also the
// value for identical fields). Without a peak the joint peak is used.
inline double flow_psnr(const FlowField& a, const FlowField& b, std::optional<double> peak = std::nullopt) {
  const double m = flow_mse(a, b);
  const double p = peak.value_or(joint_flow_peak(a, b));
  if (!(p > 0.0)) return kPsnrCap;
  return psnr_from_mse(m, p);
}

inline double endpoint_error(const FlowField& a, const FlowField& b) {
  if (!a.same_shape(b)) throw ValidationError("b", "flow dimensions differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::hypot(a[i].x - b[i].x, a[i].y - b[i].y);
  return a.empty() ? 0.0 : acc / static_cast<double>(a.size());
}

// PSNR in the 8-bit convention: images hold [0, 1], so a peak of 1 is 255.
inline double frame_psnr(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_shape(b) || a.channels() != b.channels()) throw ValidationError("b", "frame dimensions differ");
  double acc = 0.0;
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    acc += d * d;
  }
  return psnr_from_mse(av.empty() ? 0.0 : acc / static_cast<double>(av.size()), 1.0);
}

struct FlowDatasetEntry {
  std::string name;
  ImageBuffer first_frame;
  FlowField avg_flow;
  std::vector<ImageBuffer> frames;  // optional ground-truth frames
};

// A dataset slot: a loaded entry, or the reason it could not be loaded.
struct DatasetItem {
  std::string name;
  std::optional<FlowDatasetEntry> entry;
  std::string load_error;
};

struct EvaluationOptions {
  double m_factor = kDefaultMaskFactor;
  FlowParams flow_params;
  HintExtractionOptions hints;
  int workers = 1;
};

struct MetricRow {
  std::string name;
  bool ok = false;
  std::string error;
  double psnr = 0.0;
  double mse = 0.0;
  double epe = 0.0;
  std::size_t masked_pixels = 0;
  std::vector<Hint> hints;
};

struct MetricReport {
  int hint_count = 0;
  std::uint64_t seed = 0;
  std::vector<MetricRow> rows;
  double mean_psnr = 0.0;
  double mean_epe = 0.0;
  std::size_t failed = 0;
};

// mask -> hints -> dense flow -> PSNR against the ground-truth average flow,
// for each entry. Entry failures are recorded in their row.
inline MetricRow evaluate_entry(const FlowDatasetEntry& entry, int k, const EvaluationOptions& options) {
  MetricRow row;
  row.name = entry.name;
  try {
    if (!entry.first_frame.empty() && !entry.first_frame.same_shape(entry.avg_flow))
      throw ValidationError("first_frame", "first frame and average flow differ in size");
    const GeneratedMask gm = generate_mask(entry.avg_flow, options.m_factor);
    if (!gm.warning.empty()) throw ValidationError("mask", gm.warning);
    row.masked_pixels = gm.mask.count_nonzero();
    row.hints = extract_hints(entry.avg_flow, gm.mask, k, options.hints);
    const FlowField dense = dense_flow_from_hints(row.hints, gm.mask, options.flow_params, options.workers);
    row.mse = flow_mse(dense, entry.avg_flow);
    row.psnr = flow_psnr(dense, entry.avg_flow);
    row.epe = endpoint_error(dense, entry.avg_flow);
    row.ok = true;
  } catch (const Error& e) {
    row.ok = false;
    row.error = e.what();
  }
  return row;
}

inline MetricReport evaluate_pipeline(std::span<const DatasetItem> dataset, int k, const EvaluationOptions& options = {}) {
  if (dataset.empty()) throw ValidationError("dataset", "dataset is empty");
  if (k < 1) throw ValidationError("k", "k must be at least 1");
  MetricReport report;
  report.hint_count = k;
  report.seed = options.hints.seed;
  report.rows.resize(dataset.size());
  parallel_for(0, static_cast<int>(dataset.size()), options.workers, [&](int begin, int end) {
    EvaluationOptions local = options;
    local.workers = 1;
    for (int i = begin; i < end; ++i) {
      const DatasetItem& item = dataset[static_cast<std::size_t>(i)];
      if (!item.entry) {
        MetricRow& row = report.rows[static_cast<std::size_t>(i)];
        row.name = item.name;
        row.error = item.load_error.empty() ? "entry not loaded" : item.load_error;
        continue;
      }
      report.rows[static_cast<std::size_t>(i)] = evaluate_entry(*item.entry, k, local);
    }
  });
  std::size_t ok = 0;
  for (const MetricRow& row : report.rows) {
    if (!row.ok) {
      ++report.failed;
      continue;
    }
    ++ok;
    report.mean_psnr += row.psnr;
    report.mean_epe += row.epe;
  }
  if (ok > 0) {
    report.mean_psnr /= static_cast<double>(ok);
    report.mean_epe /= static_cast<double>(ok);
  }
  return report;
}

}  // namespace fluidanim
