#pragma once

// REST front end for editing sessions.
//
//   POST /sessions                      image upload -> 201 {session_id, width, height}
//   GET  /sessions/{id}                 current editing state
//   PUT  /sessions/{id}/mask            grayscale upload -> 204
//   GET  /sessions/{id}/mask            mask as 8-bit PNG
//   PUT  /sessions/{id}/hints           {hints, params?, render?, format?} -> echo + flow stats
//   POST /sessions/{id}/preview?t=N     half-resolution PNG of frame N
//   POST /sessions/{id}/render          202, or 409 while a render runs
//   GET  /sessions/{id}/status          {state, progress, reason?, manifest?}
//   GET  /sessions/{id}/result          animation bytes; ?part=manifest for the manifest
//   GET  /sessions/{id}/flow.flo        current dense flow
//
// Uploads are the raw request body or a multipart field named "image" /
// "mask". Errors are {"error": {"field", "message"}}.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "httplib.h"
#include "json.hpp"

#include "fluidanim/error.hpp"
#include "fluidanim/io/animation.hpp"
#include "fluidanim/io/flo.hpp"
#include "fluidanim/io/image_io.hpp"
#include "fluidanim/io/project_io.hpp"
#include "fluidanim/parallel.hpp"
#include "fluidanim/renderer.hpp"
#include "fluidanim/service/session.hpp"

namespace fluidanim::service {

struct ServiceConfig {
  std::string host = "0.0.0.0";
  int port = 8080;
  std::size_t max_upload = 32u * 1024u * 1024u;
  std::optional<std::string> data_dir;
  std::chrono::seconds idle_ttl{3600};
  int job_threads = 2;
  int render_workers = 1;
  std::ostream* log = &std::cerr;
};

namespace detail {

inline long long env_integer(const char* name, long long fallback, long long lo, long long hi) {
  const char* raw = std::getenv(name);
  if (!raw || !*raw) return fallback;
  char* end = nullptr;
  const long long v = std::strtoll(raw, &end, 10);
  if (*end != '\0' || v < lo || v > hi) throw ValidationError(name, std::string("invalid value '") + raw + "'");
  return v;
}

}  // namespace detail

// FM_PORT, FM_DATA_DIR, FM_MAX_UPLOAD (bytes), FM_IDLE_TTL (seconds).
inline ServiceConfig config_from_env(ServiceConfig base = {}) {
  base.port = static_cast<int>(detail::env_integer("FM_PORT", base.port, 0, 65535));
  base.max_upload =
      static_cast<std::size_t>(detail::env_integer("FM_MAX_UPLOAD", static_cast<long long>(base.max_upload), 1, 1LL << 40));
  base.idle_ttl = std::chrono::seconds(detail::env_integer("FM_IDLE_TTL", base.idle_ttl.count(), 1, 1LL << 40));
  if (const char* dir = std::getenv("FM_DATA_DIR"); dir && *dir) base.data_dir = dir;
  return base;
}

class HttpService {
 public:
  using json = nlohmann::json;

  explicit HttpService(ServiceConfig config)
      : config_(std::move(config)),
        store_(config_.data_dir ? std::optional<std::filesystem::path>(*config_.data_dir) : std::nullopt),
        jobs_(config_.job_threads) {
    install_routes();
  }

  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  ~HttpService() { stop(); }

  httplib::Server& server() { return server_; }
  SessionStore& sessions() { return store_; }
  const ServiceConfig& config() const { return config_; }

  bool listen() { return server_.listen(config_.host, config_.port); }
  int bind_to_any_port(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }

 private:
  using Request = httplib::Request;
  using Response = httplib::Response;
  using Handler = std::function<void(const Request&, Response&, Session&)>;

  static void send_error(Response& res, int status, const std::string& field, const std::string& message) {
    res.status = status;
    res.set_content(json{{"error", {{"field", field}, {"message", message}}}}.dump(), "application/json");
  }

  static void send_json(Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static std::string upload_body(const Request& req, const char* field) {
    if (req.is_multipart_form_data()) {
      if (!req.has_file(field)) throw ValidationError(field, std::string("multipart field '") + field + "' missing");
      return req.get_file_value(field).content;
    }
    return req.body;
  }

  static std::span<const std::uint8_t> bytes_of(const std::string& s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
  }

  static json flow_stats(const FlowField& flow, const MaskMap& mask) {
    double sum_u = 0, sum_v = 0, sum_mag = 0, max_mag = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < flow.size(); ++i) {
      if (mask[i] <= 0.0f) continue;
      const Vec2 f = flow[i];
      const double m = std::hypot(f.x, f.y);
      sum_u += f.x;
      sum_v += f.y;
      sum_mag += m;
      max_mag = std::max(max_mag, m);
      ++n;
    }
    const double d = n ? static_cast<double>(n) : 1.0;
    return {{"kind", to_string(flow.kind())},
            {"width", flow.width()},
            {"height", flow.height()},
            {"masked_pixels", n},
            {"mean", {sum_u / d, sum_v / d}},
            {"mean_magnitude", sum_mag / d},
            {"max_magnitude", max_mag}};
  }

  static json session_state(const Session& s) {
    json j{{"session_id", s.id()},
           {"width", s.image().width()},
           {"height", s.image().height()},
           {"has_mask", s.mask().has_value()},
           {"hints", json::array()},
           {"params", io::params_to_json(s.params())},
           {"render", io::render_to_json(s.render(), s.fps())},
           {"format", io::to_string(s.format())}};
    for (const Hint& h : s.hints()) j["hints"].push_back(io::hint_to_json(h));
    return j;
  }

  static json status_json(const RenderStatus& st) {
    json j{{"state", to_string(st.stage)}, {"progress", st.progress}};
    if (st.stage == RenderStage::failed) j["reason"] = st.reason;
    if (st.manifest) j["manifest"] = io::manifest_to_json(*st.manifest);
    return j;
  }

  // Wraps a per-session handler: resolves the id, maps exceptions to
  // status codes, and sweeps idle sessions.
  httplib::Server::Handler with_session(Handler handler) {
    return [this, handler = std::move(handler)](const Request& req, Response& res) {
      store_.evict_idle(config_.idle_ttl);
      const std::string id = req.matches[1];
      auto session = store_.find(id);
      if (!session) return send_error(res, 404, "session_id", "unknown session '" + id + "'");
      guarded(res, [&] { handler(req, res, *session); });
    };
  }

  template <class Fn>
  static void guarded(Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const ValidationError& e) {
      send_error(res, 400, e.field(), e.message());
    } catch (const IoError& e) {
      send_error(res, 400, "body", e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "body", e.what());
    }
  }

  void install_routes() {
    server_.set_payload_max_length(config_.max_upload);

    server_.set_pre_routing_handler([this](const Request& req, Response& res) {
      request_start() = std::chrono::steady_clock::now();
      if (req.has_header("Content-Length")) {
        const auto len = std::strtoull(req.get_header_value("Content-Length").c_str(), nullptr, 10);
        if (len > config_.max_upload) {
          send_error(res, 413, "body", "upload exceeds " + std::to_string(config_.max_upload) + " bytes");
          return httplib::Server::HandlerResponse::Handled;
        }
      }
      return httplib::Server::HandlerResponse::Unhandled;
    });

    server_.set_error_handler([](const Request&, Response& res) {
      if (!res.body.empty()) return;
      const std::string message = res.status == 413 ? "upload too large" : httplib::status_message(res.status);
      send_error(res, res.status, res.status == 413 ? "body" : "", message);
    });

    server_.set_exception_handler([](const Request&, Response& res, std::exception_ptr ep) {
      std::string message = "internal error";
      try {
        if (ep) std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        message = e.what();
      } catch (...) {
      }
      send_error(res, 500, "", message);
    });

    server_.set_logger([this](const Request& req, const Response& res) { log_request(req, res); });

    server_.Post("/sessions", [this](const Request& req, Response& res) {
      store_.evict_idle(config_.idle_ttl);
      guarded(res, [&] {
        const std::string body = upload_body(req, "image");
        if (body.empty()) throw ValidationError("image", "empty upload");
        ImageBuffer image = io::decode_image(bytes_of(body), "image").image;
        auto session = store_.create(std::move(image));
        send_json(res, 201,
                  {{"session_id", session->id()}, {"width", session->image().width()}, {"height", session->image().height()}});
      });
    });

    server_.Get(R"(/sessions/([0-9a-f]+))", with_session([](const Request&, Response& res, Session& s) {
      std::lock_guard lock(s.mutex());
      send_json(res, 200, session_state(s));
    }));

    server_.Put(R"(/sessions/([0-9a-f]+)/mask)", with_session([this](const Request& req, Response& res, Session& s) {
      const std::string body = upload_body(req, "mask");
      if (body.empty()) throw ValidationError("mask", "empty upload");
      MaskMap mask = io::decode_mask(bytes_of(body), "mask");
      {
        std::lock_guard lock(s.mutex());
        s.set_mask(std::move(mask));
      }
      store_.persist(s);
      res.status = 204;
    }));

    server_.Get(R"(/sessions/([0-9a-f]+)/mask)", with_session([](const Request&, Response& res, Session& s) {
      std::lock_guard lock(s.mutex());
      if (!s.mask()) return send_error(res, 404, "mask", "no mask uploaded");
      const auto png = io::encode_png(io::mask_to_image(*s.mask()));
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    }));

    server_.Put(R"(/sessions/([0-9a-f]+)/hints)", with_session([this](const Request& req, Response& res, Session& s) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::parse_error& e) {
        throw ValidationError("body", std::string("malformed JSON: ") + e.what());
      }
      if (!body.is_object()) throw ValidationError("body", "expected an object");
      for (const auto& [key, _] : body.items())
        if (key != "hints" && key != "params" && key != "render" && key != "format")
          throw ValidationError(key, "unknown field");
      if (!body.contains("hints")) throw ValidationError("hints", "required field missing");
      std::vector<Hint> hints = io::hints_from_json(body.at("hints"));
      FlowParams params = body.contains("params") ? io::params_from_json(body.at("params")) : FlowParams{};
      RenderConfig render;
      double fps = io::kDefaultFps;
      if (body.contains("render")) io::render_from_json(body.at("render"), "render", render, fps);
      io::AnimationFormat format = io::AnimationFormat::animated_png;
      if (body.contains("format")) {
        if (!body.at("format").is_string()) throw ValidationError("format", "expected a string");
        format = io::parse_animation_format(body.at("format").get<std::string>());
      }
      json echo;
      {
        std::lock_guard lock(s.mutex());
        if (!s.mask()) throw ValidationError("mask", "upload a mask before hints");
        validate_hints(hints, s.image().width(), s.image().height());
        s.set_hints(std::move(hints), params, render, format, fps);
        echo = session_state(s);
        echo["flow"] = flow_stats(*s.dense_flow(), *s.mask());
      }
      store_.persist(s);
      send_json(res, 200, echo);
    }));

    server_.Post(R"(/sessions/([0-9a-f]+)/preview)", with_session([](const Request& req, Response& res, Session& s) {
      RenderRequest job;
      {
        std::lock_guard lock(s.mutex());
        if (!s.mask()) throw ValidationError("mask", "upload a mask first");
        if (!s.ready()) throw ValidationError("hints", "upload hints first");
        job = s.render_request(1);
      }
      int t = 0;
      if (req.has_param("t")) {
        const std::string raw = req.get_param_value("t");
        char* end = nullptr;
        const long v = std::strtol(raw.c_str(), &end, 10);
        if (raw.empty() || *end != '\0') throw ValidationError("t", "expected an integer frame index");
        if (v < 0 || v > job.config.n_frames)
          throw ValidationError("t", "frame index outside [0, " + std::to_string(job.config.n_frames) + "]");
        t = static_cast<int>(v);
      }
      const RenderConfig config = preview_config(job.config, job.project.image.width(), job.project.image.height());
      const Scene scene = prepare_scene(job.project, config, config.workers);
      const ImageBuffer frame = render_scene_frame(scene, config, t);
      const auto png = io::encode_png(frame);
      res.set_header("X-Fluidanim-Frame", std::to_string(t));
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    }));

    server_.Post(R"(/sessions/([0-9a-f]+)/render)", with_session([this](const Request&, Response& res, Session& s) {
      RenderRequest job;
      {
        std::lock_guard lock(s.mutex());
        if (!s.mask()) throw ValidationError("mask", "upload a mask first");
        if (!s.ready()) throw ValidationError("hints", "upload hints first");
        job = s.render_request(config_.render_workers);
      }
      if (!s.try_begin_render()) return send_error(res, 409, "render", "a render is already running");
      jobs_.submit([session = s.shared_from_this(), job = std::move(job)] { run_render(*session, job); });
      send_json(res, 202, {{"state", "rendering"}, {"status", "/sessions/" + s.id() + "/status"}});
    }));

    server_.Get(R"(/sessions/([0-9a-f]+)/status)", with_session([](const Request&, Response& res, Session& s) {
      send_json(res, 200, status_json(s.status()));
    }));

    server_.Get(R"(/sessions/([0-9a-f]+)/result)", with_session([](const Request& req, Response& res, Session& s) {
      const RenderStatus st = s.status();
      if (st.stage != RenderStage::done)
        return send_error(res, 409, "render", "no result; render state is " + to_string(st.stage));
      const json manifest = io::manifest_to_json(*st.manifest);
      if (req.has_param("part") && req.get_param_value("part") == "manifest") return send_json(res, 200, manifest);
      const auto bytes = s.result();
      res.set_header("X-Fluidanim-Manifest", manifest.dump());
      res.set_content(std::string(bytes->begin(), bytes->end()),
                      st.manifest->format == io::AnimationFormat::gif ? "image/gif" : "image/apng");
    }));

    server_.Get(R"(/sessions/([0-9a-f]+)/flow\.flo)", with_session([](const Request&, Response& res, Session& s) {
      std::lock_guard lock(s.mutex());
      if (!s.dense_flow()) return send_error(res, 409, "hints", "no flow yet; upload a mask and hints");
      const auto bytes = io::encode_flo(*s.dense_flow());
      res.set_content(std::string(bytes.begin(), bytes.end()), "application/octet-stream");
    }));
  }

  static void run_render(Session& session, const RenderRequest& job) {
    try {
      const auto frames = render_sequence(job.project, job.config, [&](double p) { session.report_progress(p * 0.95); });
      auto bytes = encode_animation(frames, job.format, job.fps);
      io::AnimationManifest m{job.format, "result", job.fps, frames[0].width(), frames[0].height(), {"result"}, {}};
      if (job.format == io::AnimationFormat::gif)
        for (std::uint16_t d : io::detail::gif_delays(frames.size(), job.fps)) m.durations_ms.push_back(10.0 * d);
      else
        m.durations_ms.assign(frames.size(), 1000.0 / job.fps);
      session.finish(std::move(m), std::move(bytes));
    } catch (const std::exception& e) {
      session.fail(e.what());
    } catch (...) {
      session.fail("unknown error");
    }
  }

  static std::chrono::steady_clock::time_point& request_start() {
    thread_local std::chrono::steady_clock::time_point start;
    return start;
  }

  void log_request(const Request& req, const Response& res) {
    if (!config_.log) return;
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - request_start()).count();
    json rec{{"ts", std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::system_clock::now().time_since_epoch())
                        .count()},
             {"method", req.method},
             {"path", req.path},
             {"status", res.status},
             {"latency_ms", std::round(ms * 1000.0) / 1000.0},
             {"bytes_in", req.body.size()},
             {"bytes_out", res.body.size()}};
    std::lock_guard lock(log_mutex_);
    *config_.log << rec.dump() << '\n';
    config_.log->flush();
  }

  ServiceConfig config_;
  SessionStore store_;
  std::mutex log_mutex_;
  httplib::Server server_;
  WorkerPool jobs_;
};

}  // namespace fluidanim::service
