#pragma once

// Frame synthesis: the input image is warped at every level of a Gaussian
// pyramid by symmetric splatting, voids are filled coarse-to-fine, and the
// animated layer is composited over the static image through the mask.
//
// The image pyramid stands in for the encoder features of a learned frame
// generator; with first = last = input image the symmetric branches fill
// each other's voids, and whatever is still uncovered at a level comes from
// the (already filled) coarser level.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fluidanim/error.hpp"
#include "fluidanim/flow_core.hpp"
#include "fluidanim/parallel.hpp"
#include "fluidanim/pyramid.hpp"
#include "fluidanim/splatter.hpp"
#include "fluidanim/types.hpp"

namespace fluidanim {

enum class LoopMode { none, crossfade };

struct RenderConfig {
  int n_frames = 60;
  LoopMode loop_mode = LoopMode::none;
  int pyramid_levels = 4;
  // Output resolution; 0 keeps the input size (or derives one side from the
  // other preserving aspect).
  int width = 0;
  int height = 0;
  // Z = gamma * luma; 0 gives plain average splatting.
  double importance_gamma = 0.0;
  SymmetricWeighting weighting = SymmetricWeighting::starts_at_first;
  // Threads for integration and frame rendering. Output does not depend on it.
  int workers = 1;

  friend bool operator==(const RenderConfig&, const RenderConfig&) = default;
};

inline void validate(const RenderConfig& config) {
  if (config.n_frames < 1) throw ValidationError("render.n_frames", "n_frames must be at least 1");
  if (config.pyramid_levels < 1) throw ValidationError("render.pyramid_levels", "pyramid_levels must be at least 1");
  if (config.width < 0 || config.height < 0) throw ValidationError("render.width", "resolution must be >= 0");
  if (!std::isfinite(config.importance_gamma))
    throw ValidationError("render.importance_gamma", "importance_gamma must be finite");
}

// The user's inputs bundled for rendering.
struct Project {
  ImageBuffer image;
  MaskMap mask;
  std::vector<Hint> hints;
  FlowParams params;
  RenderConfig render;
  // Replaces the synthesized dense flow verbatim when present.
  std::optional<FlowField> refined_flow;
};

// The render configuration a project asks for; n_frames comes from params.
inline RenderConfig project_render_config(const Project& project) {
  RenderConfig config = project.render;
  config.n_frames = project.params.n_frames;
  return config;
}

inline std::pair<int, int> output_resolution(int in_width, int in_height, const RenderConfig& config) {
  int w = config.width, h = config.height;
  if (w == 0 && h == 0) return {in_width, in_height};
  if (w == 0) w = std::max(1, static_cast<int>(std::lround(static_cast<double>(h) * in_width / in_height)));
  if (h == 0) h = std::max(1, static_cast<int>(std::lround(static_cast<double>(w) * in_height / in_width)));
  const double expected_h = static_cast<double>(w) * in_height / in_width;
  if (std::abs(h - expected_h) > 1.0)
    throw ValidationError("render.height", "output resolution " + std::to_string(w) + "x" + std::to_string(h) +
                                               " does not preserve the input aspect ratio");
  return {w, h};
}

inline void validate(const Project& project) {
  if (project.image.empty()) throw ValidationError("image", "image is empty");
  if (!project.image.is_finite()) throw ValidationError("image", "image contains non-finite values");
  if (project.mask.empty()) throw ValidationError("mask", "mask is missing");
  if (!project.mask.same_shape(project.image))
    throw ValidationError("mask", "mask dimensions do not match the image");
  validate(project.params);
  validate(project.render);
  if (project.refined_flow) {
    if (!project.refined_flow->same_shape(project.image.width(), project.image.height()))
      throw ValidationError("refined_flow", "refined flow dimensions do not match the image");
    if (!project.refined_flow->is_finite()) throw ValidationError("refined_flow", "refined flow has non-finite values");
  } else {
    if (project.hints.empty()) throw ValidationError("hints", "no hints");
    validate_hints(project.hints, project.image.width(), project.image.height());
  }
}

// A project resampled to the output resolution with its Eulerian field.
struct Scene {
  ImageBuffer image;
  MaskMap mask;
  FlowField eulerian;  // kind dense or external_refined; speed_scale applied
};

namespace detail {

inline Vec2 rescale_point(Vec2 p, double sx, double sy, int width, int height) {
  const double max_x = std::nextafter(static_cast<double>(width), 0.0);
  const double max_y = std::nextafter(static_cast<double>(height), 0.0);
  return {std::clamp((p.x + 0.5) * sx - 0.5, 0.0, max_x), std::clamp((p.y + 0.5) * sy - 0.5, 0.0, max_y)};
}

}  // namespace detail

inline Scene prepare_scene(const Project& project, const RenderConfig& config, int workers = 1) {
  validate(project);
  validate(config);
  const int in_w = project.image.width(), in_h = project.image.height();
  const auto [w, h] = output_resolution(in_w, in_h, config);

  Scene scene;
  scene.image = resize_image(project.image, w, h);
  scene.mask = resize_mask(project.mask, w, h);
  FlowField m_f;
  if (project.refined_flow) {
    m_f = resize_flow(*project.refined_flow, w, h);
    m_f.set_kind(FlowKind::external_refined);
  } else {
    std::vector<Hint> hints = project.hints;
    if (w != in_w || h != in_h) {
      const double sx = static_cast<double>(w) / in_w, sy = static_cast<double>(h) / in_h;
      for (Hint& hint : hints) {
        hint.start = detail::rescale_point(hint.start, sx, sy, w, h);
        hint.end = detail::rescale_point(hint.end, sx, sy, w, h);
      }
    }
    FlowParams params = project.params;
    if (params.sigma && (w != in_w)) params.sigma = *params.sigma * static_cast<double>(w) / in_w;
    m_f = dense_flow_from_hints(hints, scene.mask, params, workers);
  }
  const FlowKind kind = m_f.kind();
  if (project.params.speed_scale != 1.0) m_f = scale(m_f, project.params.speed_scale);
  m_f.set_kind(kind);
  scene.eulerian = std::move(m_f);
  return scene;
}

// Renders frames of one image / mask pair; holds the image pyramid and the
// per-level importance maps so repeated frames share them.
class FrameRenderer {
 public:
  FrameRenderer(ImageBuffer image, MaskMap mask, const RenderConfig& config)
      : image_(std::move(image)), mask_(std::move(mask)), config_(config) {
    validate(config_);
    if (!mask_.same_shape(image_)) throw ValidationError("mask", "mask dimensions do not match the image");
    pyramid_ = build_pyramid(image_, config_.pyramid_levels);
    for (const ImageBuffer& level : pyramid_.levels) importance_.push_back(luminance_importance(level, config_.importance_gamma));
  }

  const ImageBuffer& image() const noexcept { return image_; }
  const MaskMap& mask() const noexcept { return mask_; }
  const RenderConfig& config() const noexcept { return config_; }
  const Pyramid& pyramid() const noexcept { return pyramid_; }

  // Animated layer for branch weights (w_first, w_last), before compositing.
  ImageBuffer animate(const FlowField& fwd, const FlowField& bwd, double w_first, double w_last) const {
    check_flow(fwd, "fwd_flow");
    check_flow(bwd, "bwd_flow");
    const int levels = pyramid_.level_count();
    std::vector<FlowField> fwd_levels{fwd}, bwd_levels{bwd};
    for (int r = 1; r < levels; ++r) {
      fwd_levels.push_back(pyr_down_flow(fwd_levels.back()));
      bwd_levels.push_back(pyr_down_flow(bwd_levels.back()));
    }

    ImageBuffer filled;
    for (int r = levels - 1; r >= 0; --r) {
      const ImageBuffer& level = pyramid_[r];
      SplatResult s = weighted_symmetric_splat(level, level, fwd_levels[static_cast<std::size_t>(r)],
                                               bwd_levels[static_cast<std::size_t>(r)], w_first, w_last,
                                               importance_[static_cast<std::size_t>(r)]);
      const ImageBuffer fallback =
          r == levels - 1 ? level : resize_bilinear(filled, level.width(), level.height());
      for (int y = 0; y < level.height(); ++y) {
        for (int x = 0; x < level.width(); ++x) {
          if (!s.is_void(x, y)) continue;
          std::copy_n(fallback.pixel(x, y), level.channels(), s.colors.pixel(x, y));
        }
      }
      filled = std::move(s.colors);
    }
    return filled;
  }

  // out = mask * animated + (1 - mask) * image, exact where the mask is 0 or 1.
  ImageBuffer composite(const ImageBuffer& animated) const {
    ImageBuffer out = image_;
    const int c = image_.channels();
    for (int y = 0; y < image_.height(); ++y) {
      for (int x = 0; x < image_.width(); ++x) {
        const float m = mask_.at(x, y);
        if (m <= 0.0f) continue;
        float* dst = out.pixel(x, y);
        const float* a = animated.pixel(x, y);
        if (m >= 1.0f) {
          std::copy_n(a, c, dst);
          continue;
        }
        for (int ch = 0; ch < c; ++ch)
          dst[ch] = static_cast<float>(static_cast<double>(m) * a[ch] + (1.0 - static_cast<double>(m)) * dst[ch]);
      }
    }
    return out;
  }

  ImageBuffer render(const FlowField& fwd, const FlowField& bwd, int t) const {
    check_time(t);
    const auto [w_first, w_last] = symmetric_weights(t, config_.n_frames, config_.weighting);
    return composite(animate(fwd, bwd, w_first, w_last));
  }

  // Frame t of a sequence, with loop crossfading when configured.
  ImageBuffer render_sequence_frame(const FlowField& fwd, const FlowField& bwd, int t) const {
    check_time(t);
    const auto [w_first, w_last] = symmetric_weights(t, config_.n_frames, config_.weighting);
    ImageBuffer layer = animate(fwd, bwd, w_first, w_last);
    if (const double beta = crossfade_weight(t); beta > 0.0) {
      // Blend toward the pure backward branch, which reaches the input image
      // as t approaches n.
      const ImageBuffer tail = animate(fwd, bwd, 0.0, 1.0);
      auto dst = layer.values();
      auto src = tail.values();
      for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] = static_cast<float>((1.0 - beta) * dst[i] + beta * static_cast<double>(src[i]));
    }
    return composite(layer);
  }

  // Weight of the loop crossfade at frame t: ramps over the last 10% of frames.
  double crossfade_weight(int t) const {
    const int n = config_.n_frames;
    if (config_.loop_mode != LoopMode::crossfade || t <= 0) return 0.0;
    const int span = std::max(1, static_cast<int>(std::ceil(0.1 * n)));
    const int begin = n - span;
    if (t < begin) return 0.0;
    return static_cast<double>(t - begin + 1) / (span + 1);
  }

 private:
  void check_time(int t) const {
    if (t < 0 || t > config_.n_frames)
      throw ValidationError("t", "frame index " + std::to_string(t) + " outside [0, " + std::to_string(config_.n_frames) + "]");
  }

  void check_flow(const FlowField& f, const char* name) const {
    if (!f.same_shape(image_.width(), image_.height()))
      throw ValidationError(name, "flow dimensions do not match the image");
  }

  ImageBuffer image_;
  MaskMap mask_;
  RenderConfig config_;
  Pyramid pyramid_;
  std::vector<ImportanceMap> importance_;
};

// Frame t from an Eulerian field: integrates F_{0->t}, and F_{0->t-n} as
// n - t steps of -m_f, then renders.
inline ImageBuffer render_frame(const ImageBuffer& image, const MaskMap& mask, const FlowField& m_f, int t,
                                const RenderConfig& config) {
  validate(config);
  if (t < 0 || t > config.n_frames) throw ValidationError("t", "frame index outside [0, n_frames]");
  if (!m_f.same_shape(image.width(), image.height()))
    throw ValidationError("m_f", "flow dimensions do not match the image");
  const FlowField fwd = euler_integrate(m_f, t, config.workers);
  const FlowField bwd = euler_integrate(negate(m_f), config.n_frames - t, config.workers);
  return FrameRenderer(image, mask, config).render(fwd, bwd, t);
}

using ProgressCallback = std::function<void(double)>;

// The n_frames frames t = 0 .. n-1 of the loop (frame n equals frame 0).
// Both integrated sequences are computed once and shared by all frames;
// frames are rendered independently on config.workers threads.
inline std::vector<ImageBuffer> render_scene(const Scene& scene, const RenderConfig& config,
                                             const ProgressCallback& progress = {}) {
  validate(config);
  const int n = config.n_frames;
  const int workers = std::max(1, config.workers);

  std::mutex progress_mutex;
  double reported = 0.0;
  auto report = [&](double p) {
    if (!progress) return;
    std::lock_guard lock(progress_mutex);
    if (p <= reported) return;
    reported = p;
    progress(p);
  };

  // Integration is weighted as a third of the job.
  const std::vector<FlowField> fwd = euler_integrate_sequence(scene.eulerian, n, workers);
  report(1.0 / 6.0);
  const std::vector<FlowField> bwd = euler_integrate_sequence(negate(scene.eulerian), n, workers);
  report(1.0 / 3.0);

  const FrameRenderer renderer(scene.image, scene.mask, config);
  std::vector<ImageBuffer> frames(static_cast<std::size_t>(n));
  std::atomic<int> done{0};
  parallel_for(0, n, workers, [&](int t_begin, int t_end) {
    for (int t = t_begin; t < t_end; ++t) {
      frames[static_cast<std::size_t>(t)] =
          renderer.render_sequence_frame(fwd[static_cast<std::size_t>(t)], bwd[static_cast<std::size_t>(n - t)], t);
      report(1.0 / 3.0 + (2.0 / 3.0) * (done.fetch_add(1) + 1) / n);
    }
  });
  return frames;
}

// One frame of the loop, integrating only as far as t needs.
inline ImageBuffer render_scene_frame(const Scene& scene, const RenderConfig& config, int t) {
  validate(config);
  if (t < 0 || t > config.n_frames) throw ValidationError("t", "frame index outside [0, n_frames]");
  const FlowField fwd = euler_integrate(scene.eulerian, t, config.workers);
  const FlowField bwd = euler_integrate(negate(scene.eulerian), config.n_frames - t, config.workers);
  return FrameRenderer(scene.image, scene.mask, config).render_sequence_frame(fwd, bwd, t);
}

// Half the output resolution and one pyramid level fewer.
inline RenderConfig preview_config(RenderConfig config, int in_width, int in_height) {
  const auto [w, h] = output_resolution(in_width, in_height, config);
  (void)h;
  config.width = std::max(1, (w + 1) / 2);
  config.height = 0;
  config.pyramid_levels = std::max(1, config.pyramid_levels - 1);
  return config;
}

inline std::vector<ImageBuffer> render_sequence(const Project& project, const RenderConfig& config,
                                                const ProgressCallback& progress = {}) {
  return render_scene(prepare_scene(project, config, config.workers), config, progress);
}

}  // namespace fluidanim
