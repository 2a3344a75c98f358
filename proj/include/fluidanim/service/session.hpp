#pragma once

// In-memory editing sessions with one render job each, optionally mirrored
// to a data directory so they survive restarts.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fluidanim/error.hpp"
#include "fluidanim/flow_core.hpp"
#include "fluidanim/io/animation.hpp"
#include "fluidanim/io/image_io.hpp"
#include "fluidanim/io/project_io.hpp"
#include "fluidanim/parallel.hpp"
#include "fluidanim/renderer.hpp"

namespace fluidanim::service {

enum class RenderStage : int { idle = 0, rendering = 1, done = 2, failed = 3 };

inline std::string to_string(RenderStage s) {
  switch (s) {
    case RenderStage::idle: return "idle";
    case RenderStage::rendering: return "rendering";
    case RenderStage::done: return "done";
    case RenderStage::failed: return "failed";
  }
  return "unknown";
}

struct RenderStatus {
  RenderStage stage = RenderStage::idle;
  double progress = 0.0;
  std::string reason;
  std::optional<io::AnimationManifest> manifest;
};

// Everything a render needs, copied out of the session.
struct RenderRequest {
  Project project;
  RenderConfig config;
  io::AnimationFormat format = io::AnimationFormat::animated_png;
  double fps = io::kDefaultFps;
};

inline std::vector<std::uint8_t> encode_animation(std::span<const ImageBuffer> frames, io::AnimationFormat format,
                                                  double fps) {
  switch (format) {
    case io::AnimationFormat::animated_png: return io::encode_apng(frames, fps);
    case io::AnimationFormat::gif: return io::encode_gif(frames, fps);
    case io::AnimationFormat::png_sequence: break;
  }
  throw ValidationError("format", "only animated_png and gif can be returned as one file");
}

class Session : public std::enable_shared_from_this<Session> {
 public:
  using Clock = std::chrono::steady_clock;

  Session(std::string id, ImageBuffer image) : id_(std::move(id)), image_(std::move(image)) { touch(); }

  const std::string& id() const noexcept { return id_; }

  void touch() { last_access_.store(Clock::now().time_since_epoch().count(), std::memory_order_relaxed); }
  Clock::time_point last_access() const {
    return Clock::time_point(Clock::duration(last_access_.load(std::memory_order_relaxed)));
  }

  // Editing state; guarded by mutex().
  std::mutex& mutex() const { return mutex_; }
  const ImageBuffer& image() const { return image_; }
  const std::optional<MaskMap>& mask() const { return mask_; }
  const std::vector<Hint>& hints() const { return hints_; }
  const FlowParams& params() const { return params_; }
  const RenderConfig& render() const { return render_; }
  io::AnimationFormat format() const { return format_; }
  double fps() const { return fps_; }
  const std::optional<FlowField>& dense_flow() const { return dense_; }

  void set_mask(MaskMap mask) {
    if (!mask.same_shape(image_))
      throw ValidationError("mask", "mask is " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()) +
                                        ", image is " + std::to_string(image_.width()) + "x" +
                                        std::to_string(image_.height()));
    mask_ = std::move(mask);
    dense_.reset();
    if (!hints_.empty()) recompute_flow();
  }

  void set_hints(std::vector<Hint> hints, FlowParams params, RenderConfig render, io::AnimationFormat format, double fps) {
    if (!mask_) throw ValidationError("mask", "upload a mask before hints");
    if (format == io::AnimationFormat::png_sequence)
      throw ValidationError("format", "the service returns animated_png or gif");
    validate(params);
    render.n_frames = params.n_frames;
    validate(render);
    output_resolution(image_.width(), image_.height(), render);
    FlowField dense = dense_flow_from_hints(hints, *mask_, params);
    hints_ = std::move(hints);
    params_ = params;
    render_ = render;
    format_ = format;
    fps_ = fps;
    dense_ = std::move(dense);
  }

  bool ready() const { return mask_.has_value() && !hints_.empty(); }

  RenderRequest render_request(int workers) const {
    RenderRequest req;
    req.project.image = image_;
    req.project.mask = *mask_;
    req.project.hints = hints_;
    req.project.params = params_;
    req.project.render = render_;
    req.config = render_;
    req.config.n_frames = params_.n_frames;
    req.config.workers = workers;
    req.format = format_;
    req.fps = fps_;
    return req;
  }

  // Render state. stage and progress are atomics so status reads never wait
  // on a running job; reason and result are written once, before the stage
  // becomes done / failed.
  RenderStage stage() const { return static_cast<RenderStage>(stage_.load(std::memory_order_acquire)); }
  double progress() const { return progress_.load(std::memory_order_acquire); }

  // idle / done / failed -> rendering. False if a job is already running.
  bool try_begin_render() {
    int expected = stage_.load(std::memory_order_acquire);
    do {
      if (expected == static_cast<int>(RenderStage::rendering)) return false;
    } while (!stage_.compare_exchange_weak(expected, static_cast<int>(RenderStage::rendering), std::memory_order_acq_rel));
    progress_.store(0.0, std::memory_order_release);
    std::lock_guard lock(result_mutex_);
    reason_.clear();
    manifest_.reset();
    result_.reset();
    return true;
  }

  void report_progress(double p) {
    double cur = progress_.load(std::memory_order_relaxed);
    while (p > cur && !progress_.compare_exchange_weak(cur, p, std::memory_order_acq_rel)) {
    }
  }

  void finish(io::AnimationManifest manifest, std::vector<std::uint8_t> bytes) {
    {
      std::lock_guard lock(result_mutex_);
      manifest_ = std::move(manifest);
      result_ = std::make_shared<const std::vector<std::uint8_t>>(std::move(bytes));
    }
    report_progress(1.0);
    stage_.store(static_cast<int>(RenderStage::done), std::memory_order_release);
  }

  void fail(std::string reason) {
    {
      std::lock_guard lock(result_mutex_);
      reason_ = std::move(reason);
    }
    stage_.store(static_cast<int>(RenderStage::failed), std::memory_order_release);
  }

  RenderStatus status() const {
    RenderStatus s;
    s.stage = stage();
    s.progress = progress();
    if (s.stage == RenderStage::done || s.stage == RenderStage::failed) {
      std::lock_guard lock(result_mutex_);
      s.reason = reason_;
      s.manifest = manifest_;
    }
    return s;
  }

  std::shared_ptr<const std::vector<std::uint8_t>> result() const {
    std::lock_guard lock(result_mutex_);
    return result_;
  }

 private:
  void recompute_flow() { dense_ = dense_flow_from_hints(hints_, *mask_, params_); }

  std::string id_;
  std::atomic<Clock::rep> last_access_{0};

  mutable std::mutex mutex_;
  ImageBuffer image_;
  std::optional<MaskMap> mask_;
  std::vector<Hint> hints_;
  FlowParams params_;
  RenderConfig render_;
  io::AnimationFormat format_ = io::AnimationFormat::animated_png;
  double fps_ = io::kDefaultFps;
  std::optional<FlowField> dense_;

  std::atomic<int> stage_{static_cast<int>(RenderStage::idle)};
  std::atomic<double> progress_{0.0};
  mutable std::mutex result_mutex_;
  std::string reason_;
  std::optional<io::AnimationManifest> manifest_;
  std::shared_ptr<const std::vector<std::uint8_t>> result_;
};

inline std::string random_session_id() {
  static std::mutex m;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(m);
  std::ostringstream os;
  os << std::hex;
  for (int i = 0; i < 2; ++i) {
    const std::uint64_t v = rng();
    for (int s = 60; s >= 0; s -= 4) os << ((v >> s) & 0xf);
  }
  return os.str();
}

class SessionStore {
 public:
  explicit SessionStore(std::optional<std::filesystem::path> data_dir = std::nullopt) : data_dir_(std::move(data_dir)) {
    if (data_dir_) {
      std::filesystem::create_directories(*data_dir_);
      load_persisted();
    }
  }

  std::shared_ptr<Session> create(ImageBuffer image) {
    auto session = std::make_shared<Session>(random_session_id(), std::move(image));
    {
      std::lock_guard lock(mutex_);
      sessions_.emplace(session->id(), session);
    }
    persist(*session);
    return session;
  }

  std::shared_ptr<Session> find(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return nullptr;
    it->second->touch();
    return it->second;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return sessions_.size();
  }

  // Drops sessions idle for longer than `ttl` that are not rendering.
  std::size_t evict_idle(std::chrono::steady_clock::duration ttl) {
    const auto now = std::chrono::steady_clock::now();
    std::vector<std::string> dropped;
    {
      std::lock_guard lock(mutex_);
      for (auto it = sessions_.begin(); it != sessions_.end();) {
        if (now - it->second->last_access() > ttl && it->second->stage() != RenderStage::rendering) {
          dropped.push_back(it->first);
          it = sessions_.erase(it);
        } else {
          ++it;
        }
      }
    }
    if (data_dir_)
      for (const auto& id : dropped) std::filesystem::remove_all(*data_dir_ / id);
    return dropped.size();
  }

  // Mirrors a session's editing state into the data directory, if any.
  void persist(const Session& s) const {
    if (!data_dir_) return;
    const auto dir = *data_dir_ / s.id();
    std::filesystem::create_directories(dir);
    std::lock_guard lock(s.mutex());
    io::write_image(s.image(), (dir / "image.png").string(), 16);
    io::ProjectDocument doc;
    doc.image = "image.png";
    if (s.mask()) doc.mask_rle = io::rle_encode(*s.mask());
    doc.hints = s.hints();
    doc.params = s.params();
    doc.render = s.render();
    doc.render.n_frames = RenderConfig{}.n_frames;
    doc.render.workers = RenderConfig{}.workers;
    doc.fps = s.fps();
    io::save_project(doc, (dir / "project.json").string());
  }

 private:
  void load_persisted() {
    for (const auto& entry : std::filesystem::directory_iterator(*data_dir_)) {
      if (!entry.is_directory()) continue;
      const auto doc_path = entry.path() / "project.json";
      if (!std::filesystem::exists(doc_path)) continue;
      try {
        const io::ProjectDocument doc = io::load_project(doc_path.string());
        auto session = std::make_shared<Session>(entry.path().filename().string(),
                                                 io::read_image((entry.path() / doc.image).string()));
        if (doc.mask_rle) session->set_mask(io::rle_decode(*doc.mask_rle));
        if (!doc.hints.empty())
          session->set_hints(doc.hints, doc.params, doc.render, io::AnimationFormat::animated_png, doc.fps);
        sessions_.emplace(session->id(), session);
      } catch (const Error&) {
        // Unreadable session directories are left on disk and skipped.
      }
    }
  }

  std::optional<std::filesystem::path> data_dir_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

}  // namespace fluidanim::service
