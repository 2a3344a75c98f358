#pragma once

// Shared fixtures and independent reference implementations for tests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fluidanim/types.hpp"

namespace fa_test {

using fluidanim::FlowField;
using fluidanim::Hint;
using fluidanim::ImageBuffer;
using fluidanim::ImportanceMap;
using fluidanim::MaskMap;
using fluidanim::Vec2;

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline ImageBuffer random_image(std::mt19937_64& rng, int w, int h, int c = 3) {
  ImageBuffer img(w, h, c);
  for (float& v : img.values()) v = static_cast<float>(uniform(rng, 0.0, 1.0));
  return img;
}

inline FlowField random_flow(std::mt19937_64& rng, int w, int h, double amplitude) {
  FlowField f(w, h);
  for (Vec2& v : f.values()) v = {uniform(rng, -amplitude, amplitude), uniform(rng, -amplitude, amplitude)};
  return f;
}

inline ImportanceMap random_importance(std::mt19937_64& rng, int w, int h, double amplitude) {
  ImportanceMap z(w, h);
  for (float& v : z.values()) v = static_cast<float>(uniform(rng, -amplitude, amplitude));
  return z;
}

// Roughly half the pixels set, some soft values, never empty.
inline MaskMap random_mask(std::mt19937_64& rng, int w, int h) {
  MaskMap m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double r = uniform(rng, 0.0, 1.0);
      m.set(x, y, r < 0.45 ? 0.0f : (r < 0.55 ? static_cast<float>(uniform(rng, 0.05, 1.0)) : 1.0f));
    }
  m.set(uniform_int(rng, 0, w - 1), uniform_int(rng, 0, h - 1), 1.0f);
  return m;
}

// In-bounds hints whose starts round to distinct pixels.
inline std::vector<Hint> random_hints(std::mt19937_64& rng, int w, int h, int n) {
  std::vector<Hint> hints;
  std::set<std::pair<int, int>> used;
  while (static_cast<int>(hints.size()) < n) {
    const int px = uniform_int(rng, 0, w - 1), py = uniform_int(rng, 0, h - 1);
    if (!used.insert({px, py}).second) continue;
    Hint hint;
    hint.start = {px + uniform(rng, -0.49, 0.49), py + uniform(rng, -0.49, 0.49)};
    hint.start.x = std::clamp(hint.start.x, 0.0, w - 1e-9);
    hint.start.y = std::clamp(hint.start.y, 0.0, h - 1e-9);
    hint.end = {uniform(rng, 0.0, w - 1e-9), uniform(rng, 0.0, h - 1e-9)};
    hint.speed = uniform(rng, 0.0, 2.0);
    hints.push_back(hint);
  }
  return hints;
}

// Weighted average of hint flows evaluated term by term, in long double and
// without any stabilizing shift.
inline Vec2 oracle_dense_at(const std::vector<Hint>& hints, double sigma, double px, double py) {
  long double num_x = 0, num_y = 0, den = 0;
  for (const Hint& h : hints) {
    const long double dx = px - h.start.x, dy = py - h.start.y;
    const long double d = std::sqrt(dx * dx + dy * dy);
    const long double w = std::exp(-(d / sigma) * (d / sigma));
    const long double fx = (static_cast<long double>(h.end.x) - h.start.x) * h.speed;
    const long double fy = (static_cast<long double>(h.end.y) - h.start.y) * h.speed;
    num_x += w * fx;
    num_y += w * fy;
    den += w;
  }
  return {static_cast<double>(num_x / den), static_cast<double>(num_y / den)};
}

// Bilinear lookup with border clamp, written out from the four corner
// weights instead of nested lerps.
inline Vec2 oracle_sample(const FlowField& f, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(f.width() - 1));
  y = std::clamp(y, 0.0, static_cast<double>(f.height() - 1));
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, f.width() - 1), y1 = std::min(y0 + 1, f.height() - 1);
  const double ax = x - x0, ay = y - y0;
  const double w00 = (1 - ax) * (1 - ay), w10 = ax * (1 - ay), w01 = (1 - ax) * ay, w11 = ax * ay;
  const Vec2 a = f.at(x0, y0), b = f.at(x1, y0), c = f.at(x0, y1), d = f.at(x1, y1);
  return {w00 * a.x + w10 * b.x + w01 * c.x + w11 * d.x, w00 * a.y + w10 * b.y + w01 * c.y + w11 * d.y};
}

inline double max_abs_diff(const ImageBuffer& a, const ImageBuffer& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.values().size(); ++i)
    m = std::max(m, static_cast<double>(std::abs(a.values()[i] - b.values()[i])));
  return m;
}

inline double max_abs_diff(const FlowField& a, const FlowField& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max({m, std::abs(a[i].x - b[i].x), std::abs(a[i].y - b[i].y)});
  return m;
}

inline bool bit_identical(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_shape(b) || a.channels() != b.channels()) return false;
  for (std::size_t i = 0; i < a.values().size(); ++i)
    if (std::bit_cast<std::uint32_t>(a.values()[i]) != std::bit_cast<std::uint32_t>(b.values()[i])) return false;
  return true;
}

inline bool bit_identical(const FlowField& a, const FlowField& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i].x) != std::bit_cast<std::uint64_t>(b[i].x) ||
        std::bit_cast<std::uint64_t>(a[i].y) != std::bit_cast<std::uint64_t>(b[i].y))
      return false;
  return true;
}

// Picks a fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("fluidanim_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace fa_test
