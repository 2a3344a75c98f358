#pragma once

// Project document: a JSON file naming the image, the mask (a file or an
// inline run-length encoding), the hints and the parameters. Unknown fields
// are rejected with their path; documents from a newer schema are refused.
//
// {
//   "schema_version": 1,
//   "image": "lake.png",
//   "mask": "lake_mask.png",
//   "hints": [{"start": [120, 80], "end": [126, 80], "speed": 1.5}],
//   "params": {"sigma": 40, "n_frames": 60, "speed_scale": 1},
//   "render": {"loop_mode": "none", "pyramid_levels": 4, "width": 0, "height": 0,
//              "importance_gamma": 0, "weighting": "starts_at_first", "fps": 30},
//   "refined_flow": "refined.flo"
// }

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fluidanim/error.hpp"
#include "fluidanim/flow_core.hpp"
#include "fluidanim/io/animation.hpp"
#include "fluidanim/io/flo.hpp"
#include "fluidanim/io/image_io.hpp"
#include "fluidanim/renderer.hpp"

namespace fluidanim::io {

inline constexpr int kProjectSchemaVersion = 1;

// Row-major runs of 8-bit mask values.
struct RleMask {
  int width = 0;
  int height = 0;
  std::vector<std::pair<int, std::uint64_t>> runs;  // (value 0..255, count)

  friend bool operator==(const RleMask&, const RleMask&) = default;
};

inline RleMask rle_encode(const MaskMap& mask) {
  RleMask rle{mask.width(), mask.height(), {}};
  for (float v : mask.values()) {
    const int q = static_cast<int>(std::lround(v * 255.0f));
    if (!rle.runs.empty() && rle.runs.back().first == q)
      ++rle.runs.back().second;
    else
      rle.runs.emplace_back(q, 1);
  }
  return rle;
}

inline MaskMap rle_decode(const RleMask& rle) {
  if (rle.width <= 0 || rle.height <= 0) throw ValidationError("mask_rle", "dimensions must be positive");
  MaskMap mask(rle.width, rle.height);
  const std::uint64_t total = static_cast<std::uint64_t>(rle.width) * rle.height;
  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < rle.runs.size(); ++i) {
    const auto [value, count] = rle.runs[i];
    const std::string path = "mask_rle.runs[" + std::to_string(i) + "]";
    if (value < 0 || value > 255) throw ValidationError(path, "value must lie in [0, 255]");
    if (pos + count > total) throw ValidationError(path, "runs exceed width * height");
    for (std::uint64_t k = 0; k < count; ++k, ++pos)
      mask.set(static_cast<int>(pos % rle.width), static_cast<int>(pos / rle.width), value / 255.0f);
  }
  if (pos != total) throw ValidationError("mask_rle.runs", "runs cover fewer than width * height pixels");
  return mask;
}

struct ProjectDocument {
  int schema_version = kProjectSchemaVersion;
  std::string image;
  std::optional<std::string> mask;
  std::optional<RleMask> mask_rle;
  std::vector<Hint> hints;
  FlowParams params;
  RenderConfig render;  // n_frames and workers are not persisted here
  double fps = kDefaultFps;
  std::optional<std::string> refined_flow;

  friend bool operator==(const ProjectDocument&, const ProjectDocument&) = default;
};

inline std::string to_string(LoopMode m) { return m == LoopMode::crossfade ? "crossfade" : "none"; }
inline std::string to_string(SymmetricWeighting w) {
  return w == SymmetricWeighting::literal ? "literal" : "starts_at_first";
}

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  const std::set<std::string> names(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items())
    if (!names.count(key)) throw ValidationError(path.empty() ? key : path + "." + key, "unknown field");
}

inline const json& require(const json& obj, const std::string& path, const char* key) {
  if (!obj.contains(key)) throw ValidationError(path.empty() ? key : path + "." + key, "required field missing");
  return obj.at(key);
}

inline std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

inline double get_number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ValidationError(path, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ValidationError(path, "expected a finite number");
  return d;
}

inline int get_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw ValidationError(path, "expected an integer");
  const auto i = v.get<std::int64_t>();
  if (i < INT32_MIN || i > INT32_MAX) throw ValidationError(path, "integer out of range");
  return static_cast<int>(i);
}

inline std::string get_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw ValidationError(path, "expected a string");
  return v.get<std::string>();
}

inline Vec2 get_point(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 2) throw ValidationError(path, "expected [x, y]");
  return {get_number(v[0], path + "[0]"), get_number(v[1], path + "[1]")};
}

inline json point_json(Vec2 p) { return json::array({p.x, p.y}); }

}  // namespace detail

inline nlohmann::json hint_to_json(const Hint& h) {
  return {{"start", detail::point_json(h.start)}, {"end", detail::point_json(h.end)}, {"speed", h.speed}};
}

inline Hint hint_from_json(const nlohmann::json& v, const std::string& path) {
  if (!v.is_object()) throw ValidationError(path, "expected an object");
  detail::reject_unknown(v, path, {"start", "end", "speed"});
  Hint h;
  h.start = detail::get_point(detail::require(v, path, "start"), path + ".start");
  h.end = detail::get_point(detail::require(v, path, "end"), path + ".end");
  if (v.contains("speed")) h.speed = detail::get_number(v.at("speed"), path + ".speed");
  if (h.speed < 0.0) throw ValidationError(path + ".speed", "speed must be >= 0");
  return h;
}

inline std::vector<Hint> hints_from_json(const nlohmann::json& v, const std::string& path = "hints") {
  if (!v.is_array()) throw ValidationError(path, "expected an array");
  std::vector<Hint> hints;
  for (std::size_t i = 0; i < v.size(); ++i) hints.push_back(hint_from_json(v[i], path + "[" + std::to_string(i) + "]"));
  return hints;
}

inline nlohmann::json params_to_json(const FlowParams& p) {
  nlohmann::json j{{"n_frames", p.n_frames}, {"speed_scale", p.speed_scale}};
  if (p.sigma) j["sigma"] = *p.sigma;
  return j;
}

inline FlowParams params_from_json(const nlohmann::json& v, const std::string& path = "params") {
  if (!v.is_object()) throw ValidationError(path, "expected an object");
  detail::reject_unknown(v, path, {"sigma", "n_frames", "speed_scale"});
  FlowParams p;
  if (v.contains("sigma") && !v.at("sigma").is_null()) p.sigma = detail::get_number(v.at("sigma"), path + ".sigma");
  if (v.contains("n_frames")) p.n_frames = detail::get_int(v.at("n_frames"), path + ".n_frames");
  if (v.contains("speed_scale")) p.speed_scale = detail::get_number(v.at("speed_scale"), path + ".speed_scale");
  if (p.sigma && !(*p.sigma > 0.0)) throw ValidationError(path + ".sigma", "sigma must be positive");
  if (p.n_frames < 1) throw ValidationError(path + ".n_frames", "n_frames must be at least 1");
  return p;
}

inline nlohmann::json render_to_json(const RenderConfig& r, double fps) {
  return {{"loop_mode", to_string(r.loop_mode)},
          {"pyramid_levels", r.pyramid_levels},
          {"width", r.width},
          {"height", r.height},
          {"importance_gamma", r.importance_gamma},
          {"weighting", to_string(r.weighting)},
          {"fps", fps}};
}

inline void render_from_json(const nlohmann::json& v, const std::string& path, RenderConfig& r, double& fps) {
  if (!v.is_object()) throw ValidationError(path, "expected an object");
  detail::reject_unknown(v, path, {"loop_mode", "pyramid_levels", "width", "height", "importance_gamma", "weighting", "fps"});
  if (v.contains("loop_mode")) {
    const std::string m = detail::get_string(v.at("loop_mode"), path + ".loop_mode");
    if (m == "none")
      r.loop_mode = LoopMode::none;
    else if (m == "crossfade")
      r.loop_mode = LoopMode::crossfade;
    else
      throw ValidationError(path + ".loop_mode", "expected \"none\" or \"crossfade\"");
  }
  if (v.contains("pyramid_levels")) {
    r.pyramid_levels = detail::get_int(v.at("pyramid_levels"), path + ".pyramid_levels");
    if (r.pyramid_levels < 1) throw ValidationError(path + ".pyramid_levels", "must be at least 1");
  }
  if (v.contains("width")) r.width = detail::get_int(v.at("width"), path + ".width");
  if (v.contains("height")) r.height = detail::get_int(v.at("height"), path + ".height");
  if (r.width < 0) throw ValidationError(path + ".width", "must be >= 0");
  if (r.height < 0) throw ValidationError(path + ".height", "must be >= 0");
  if (v.contains("importance_gamma"))
    r.importance_gamma = detail::get_number(v.at("importance_gamma"), path + ".importance_gamma");
  if (v.contains("weighting")) {
    const std::string w = detail::get_string(v.at("weighting"), path + ".weighting");
    if (w == "starts_at_first")
      r.weighting = SymmetricWeighting::starts_at_first;
    else if (w == "literal")
      r.weighting = SymmetricWeighting::literal;
    else
      throw ValidationError(path + ".weighting", "expected \"starts_at_first\" or \"literal\"");
  }
  if (v.contains("fps")) {
    fps = detail::get_number(v.at("fps"), path + ".fps");
    if (!(fps > 0.0) || fps > 600.0) throw ValidationError(path + ".fps", "must lie in (0, 600]");
  }
}

inline nlohmann::json manifest_to_json(const AnimationManifest& m) {
  return {{"format", to_string(m.format)}, {"path", m.path},     {"fps", m.fps},
          {"width", m.width},             {"height", m.height}, {"files", m.files},
          {"durations_ms", m.durations_ms}};
}

inline nlohmann::json project_to_json(const ProjectDocument& doc) {
  nlohmann::json j;
  j["schema_version"] = doc.schema_version;
  j["image"] = doc.image;
  if (doc.mask) j["mask"] = *doc.mask;
  if (doc.mask_rle) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& [v, n] : doc.mask_rle->runs) runs.push_back({v, n});
    j["mask_rle"] = {{"width", doc.mask_rle->width}, {"height", doc.mask_rle->height}, {"runs", runs}};
  }
  j["hints"] = nlohmann::json::array();
  for (const Hint& h : doc.hints) j["hints"].push_back(hint_to_json(h));
  j["params"] = params_to_json(doc.params);
  j["render"] = render_to_json(doc.render, doc.fps);
  if (doc.refined_flow) j["refined_flow"] = *doc.refined_flow;
  return j;
}

inline ProjectDocument project_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("", "project document must be a JSON object");
  detail::reject_unknown(j, "", {"schema_version", "image", "mask", "mask_rle", "hints", "params", "render", "refined_flow"});
  ProjectDocument doc;
  doc.schema_version = detail::get_int(detail::require(j, "", "schema_version"), "schema_version");
  if (doc.schema_version > kProjectSchemaVersion)
    throw ValidationError("schema_version", "unsupported schema version " + std::to_string(doc.schema_version) +
                                                " (this build reads up to " + std::to_string(kProjectSchemaVersion) + ")");
  if (doc.schema_version < 1) throw ValidationError("schema_version", "must be >= 1");
  doc.image = detail::get_string(detail::require(j, "", "image"), "image");
  if (j.contains("mask")) doc.mask = detail::get_string(j.at("mask"), "mask");
  if (j.contains("mask_rle")) {
    const auto& m = j.at("mask_rle");
    if (!m.is_object()) throw ValidationError("mask_rle", "expected an object");
    detail::reject_unknown(m, "mask_rle", {"width", "height", "runs"});
    RleMask rle;
    rle.width = detail::get_int(detail::require(m, "mask_rle", "width"), "mask_rle.width");
    rle.height = detail::get_int(detail::require(m, "mask_rle", "height"), "mask_rle.height");
    const auto& runs = detail::require(m, "mask_rle", "runs");
    if (!runs.is_array()) throw ValidationError("mask_rle.runs", "expected an array");
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const std::string p = "mask_rle.runs[" + std::to_string(i) + "]";
      if (!runs[i].is_array() || runs[i].size() != 2 || !runs[i][0].is_number_integer() ||
          !runs[i][1].is_number_unsigned())
        throw ValidationError(p, "expected [value, count]");
      rle.runs.emplace_back(runs[i][0].get<int>(), runs[i][1].get<std::uint64_t>());
    }
    doc.mask_rle = rle;
  }
  if (doc.mask && doc.mask_rle) throw ValidationError("mask_rle", "give either mask or mask_rle, not both");
  doc.hints = hints_from_json(detail::require(j, "", "hints"));
  if (j.contains("params")) doc.params = params_from_json(j.at("params"));
  if (j.contains("render")) render_from_json(j.at("render"), "render", doc.render, doc.fps);
  if (j.contains("refined_flow")) doc.refined_flow = detail::get_string(j.at("refined_flow"), "refined_flow");
  return doc;
}

inline ProjectDocument parse_project(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("", std::string("malformed JSON: ") + e.what());
  }
  return project_from_json(j);
}

inline std::string serialize_project(const ProjectDocument& doc) { return project_to_json(doc).dump(2) + "\n"; }

inline ProjectDocument load_project(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open project document");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_project(ss.str());
}

inline void save_project(const ProjectDocument& doc, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  out << serialize_project(doc);
  if (!out) throw IoError(path, "write failed");
}

// Loads everything the document references, relative to `base_dir`.
inline Project resolve_project(const ProjectDocument& doc, const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::string& p) { return std::filesystem::path(p).is_absolute() ? p : (base_dir / p).string(); };
  Project project;
  project.image = read_image(resolve(doc.image));
  if (doc.mask)
    project.mask = read_mask(resolve(*doc.mask), project.image);
  else if (doc.mask_rle) {
    project.mask = rle_decode(*doc.mask_rle);
    if (!project.mask.same_shape(project.image)) throw ValidationError("mask_rle", "mask dimensions do not match the image");
  } else
    throw ValidationError("mask", "project names no mask");
  project.hints = doc.hints;
  project.params = doc.params;
  project.render = doc.render;
  project.render.n_frames = doc.params.n_frames;
  if (doc.refined_flow) project.refined_flow = read_flo(resolve(*doc.refined_flow), FlowKind::external_refined);
  validate(project);
  return project;
}

inline Project load_and_resolve_project(const std::string& path) {
  return resolve_project(load_project(path), std::filesystem::path(path).parent_path());
}

}  // namespace fluidanim::io
