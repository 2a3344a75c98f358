#pragma once

// Batch commands behind the fluidanim executable. Each returns the process
// exit code: 0 success, 2 invalid input, 3 I/O failure. Failures also write
// one JSON line {"error": {...}} to the error stream.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fluidanim/dataset_tools.hpp"
#include "fluidanim/error.hpp"
#include "fluidanim/flow_core.hpp"
#include "fluidanim/io/animation.hpp"
#include "fluidanim/io/flo.hpp"
#include "fluidanim/io/image_io.hpp"
#include "fluidanim/io/project_io.hpp"
#include "fluidanim/renderer.hpp"

namespace fluidanim::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitIo = 3;

struct AnimateOptions {
  std::string image;
  std::string mask;
  // A project document, a JSON file of hints, inline JSON, or
  // "x0,y0,x1,y1[,speed];..." text.
  std::string hints;
  std::optional<double> sigma;
  std::optional<int> frames;
  std::string out = "out";
  std::string format = "png_sequence";
  std::optional<double> speed_scale;
  std::string refined_flow;
  std::optional<double> fps;
  int workers = 1;
};

struct EvaluateOptions {
  std::string dataset;
  int hints = 5;
  std::string report;
  double m_factor = kDefaultMaskFactor;
  std::uint64_t seed = HintExtractionOptions{}.seed;
  bool position_only = false;
  int workers = 1;
};

namespace detail {

using json = nlohmann::json;

inline int report_error(std::ostream& err, const std::exception& e) {
  json j;
  int code = kExitIo;
  if (const auto* v = dynamic_cast<const ValidationError*>(&e)) {
    code = kExitValidation;
    j = {{"kind", "validation"}, {"field", v->field()}, {"message", v->message()}};
  } else if (const auto* io = dynamic_cast<const IoError*>(&e)) {
    j = {{"kind", "io"}, {"path", io->path()}, {"message", e.what()}};
  } else {
    j = {{"kind", "io"}, {"message", e.what()}};
  }
  j["exit_code"] = code;
  err << json{{"error", j}}.dump() << '\n';
  return code;
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open for reading");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<Hint> parse_compact_hints(const std::string& text) {
  std::vector<Hint> hints;
  std::stringstream groups(text);
  std::string group;
  while (std::getline(groups, group, ';')) {
    if (group.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string path = "hints[" + std::to_string(hints.size()) + "]";
    std::vector<double> values;
    std::stringstream fields(group);
    std::string field;
    while (std::getline(fields, field, ',')) {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(field, &used);
      } catch (const std::exception&) {
        throw ValidationError(path, "expected x0,y0,x1,y1[,speed], got '" + group + "'");
      }
      if (field.find_first_not_of(" \t", used) != std::string::npos)
        throw ValidationError(path, "expected x0,y0,x1,y1[,speed], got '" + group + "'");
      values.push_back(v);
    }
    if (values.size() != 4 && values.size() != 5)
      throw ValidationError(path, "expected x0,y0,x1,y1[,speed], got '" + group + "'");
    Hint h{{values[0], values[1]}, {values[2], values[3]}, values.size() == 5 ? values[4] : 1.0};
    if (h.speed < 0.0) throw ValidationError(path + ".speed", "speed must be >= 0");
    hints.push_back(h);
  }
  if (hints.empty()) throw ValidationError("hints", "no hints given");
  return hints;
}

// JSON forms: a project document, {"hints": [...]}, or a bare array.
inline std::optional<io::ProjectDocument> hints_json(const json& j, std::vector<Hint>& hints) {
  if (j.is_array()) {
    hints = io::hints_from_json(j);
    return std::nullopt;
  }
  if (j.is_object() && j.contains("schema_version")) {
    io::ProjectDocument doc = io::project_from_json(j);
    hints = doc.hints;
    return doc;
  }
  if (j.is_object() && j.contains("hints") && j.size() == 1) {
    hints = io::hints_from_json(j.at("hints"));
    return std::nullopt;
  }
  throw ValidationError("hints", "expected a project document, {\"hints\": [...]} or an array of hints");
}

struct ResolvedHints {
  std::vector<Hint> hints;
  std::optional<io::ProjectDocument> project;
  std::filesystem::path base_dir;
};

inline ResolvedHints resolve_hints(const std::string& arg) {
  ResolvedHints r;
  if (arg.empty()) return r;
  std::string text = arg;
  const std::size_t first = arg.find_first_not_of(" \t\r\n");
  const bool inline_json = first != std::string::npos && (arg[first] == '[' || arg[first] == '{');
  if (!inline_json && std::filesystem::is_regular_file(arg)) {
    text = slurp(arg);
    r.base_dir = std::filesystem::path(arg).parent_path();
  } else if (!inline_json && arg.find(',') == std::string::npos) {
    throw IoError(arg, "hints file not found");
  }
  const std::size_t lead = text.find_first_not_of(" \t\r\n");
  if (lead != std::string::npos && (text[lead] == '[' || text[lead] == '{')) {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ValidationError("hints", std::string("malformed JSON: ") + e.what());
    }
    r.project = hints_json(j, r.hints);
  } else {
    r.hints = parse_compact_hints(text);
  }
  return r;
}

inline json manifest_json(const io::AnimationManifest& m, const FlowField& flow, const std::string& flo_path) {
  json j = io::manifest_to_json(m);
  j["flow"] = {{"path", flo_path}, {"kind", to_string(flow.kind())}, {"width", flow.width()}, {"height", flow.height()}};
  return j;
}

}  // namespace detail

// Builds the project an animate invocation describes. Flags override what a
// project document in --hints says.
inline Project animate_project(const AnimateOptions& opt, double* fps_out = nullptr) {
  const detail::ResolvedHints rh = detail::resolve_hints(opt.hints);
  double fps = io::kDefaultFps;
  io::ProjectDocument doc;
  if (rh.project) {
    doc = *rh.project;
    fps = doc.fps;
  }
  if (!opt.image.empty()) doc.image = opt.image;
  if (doc.image.empty()) throw ValidationError("image", "no input image (--image)");
  if (!opt.mask.empty()) {
    doc.mask = opt.mask;
    doc.mask_rle.reset();
  }
  if (!doc.mask && !doc.mask_rle) throw ValidationError("mask", "no mask (--mask)");
  if (!rh.project) doc.hints = rh.hints;
  if (opt.sigma) doc.params.sigma = *opt.sigma;
  if (opt.frames) doc.params.n_frames = *opt.frames;
  if (opt.speed_scale) doc.params.speed_scale = *opt.speed_scale;
  if (!opt.refined_flow.empty()) doc.refined_flow = std::filesystem::absolute(opt.refined_flow).string();
  if (opt.fps) fps = *opt.fps;
  // Paths given on the command line are relative to the working directory;
  // paths inside a project document are relative to the document.
  const auto base = rh.project ? rh.base_dir : std::filesystem::path();
  if (!opt.image.empty()) doc.image = std::filesystem::absolute(opt.image).string();
  if (!opt.mask.empty()) doc.mask = std::filesystem::absolute(opt.mask).string();
  if (opt.hints.empty() && opt.refined_flow.empty()) throw ValidationError("hints", "no hints (--hints)");
  Project project = io::resolve_project(doc, base);
  if (fps_out) *fps_out = fps;
  return project;
}

inline int run_animate(const AnimateOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    double fps = io::kDefaultFps;
    const Project project = animate_project(opt, &fps);
    const io::AnimationFormat format = io::parse_animation_format(opt.format);
    if (opt.workers < 1) throw ValidationError("workers", "must be at least 1");
    if (!(fps > 0.0) || fps > 600.0) throw ValidationError("fps", "must lie in (0, 600]");

    RenderConfig config = project_render_config(project);
    config.workers = opt.workers;
    const Scene scene = prepare_scene(project, config, config.workers);
    err << detail::json{{"event", "flow"},
                        {"kind", to_string(scene.eulerian.kind())},
                        {"width", scene.eulerian.width()},
                        {"height", scene.eulerian.height()},
                        {"hints", project.hints.size()}}
               .dump()
        << '\n';

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(opt.out, ec);
    if (!fs::is_directory(opt.out)) throw IoError(opt.out, "cannot create output directory");
    const fs::path dir(opt.out);
    const std::string flo_path = (dir / "flow.flo").string();
    io::write_flo(scene.eulerian, flo_path);

    const std::vector<ImageBuffer> frames = render_scene(scene, config);
    std::string target;
    switch (format) {
      case io::AnimationFormat::png_sequence: target = (dir / "frames").string(); break;
      case io::AnimationFormat::animated_png: target = (dir / "animation.png").string(); break;
      case io::AnimationFormat::gif: target = (dir / "animation.gif").string(); break;
    }
    const io::AnimationManifest manifest = io::write_animation(frames, target, format, fps);
    const detail::json mj = detail::manifest_json(manifest, scene.eulerian, flo_path);
    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    if (!mf) throw IoError((dir / "manifest.json").string(), "cannot open for writing");
    mf << mj.dump(2) << '\n';
    if (!mf) throw IoError((dir / "manifest.json").string(), "write failed");
    out << mj.dump() << '\n';
    return kExitOk;
  } catch (const Error& e) {
    return detail::report_error(err, e);
  } catch (const std::filesystem::filesystem_error& e) {
    return detail::report_error(err, IoError(e.path1().string(), e.what()));
  }
}

// Each subdirectory of `root` is one entry: first.png, avg_flow.flo and an
// optional frames/ directory of %04d.png. Entries that fail to load are kept
// with their error.
inline std::vector<DatasetItem> load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError(root, "dataset directory not found");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<DatasetItem> items;
  for (const fs::path& d : dirs) {
    DatasetItem item;
    item.name = d.filename().string();
    try {
      FlowDatasetEntry entry;
      entry.name = item.name;
      entry.avg_flow = io::read_flo((d / "avg_flow.flo").string());
      if (fs::exists(d / "first.png")) entry.first_frame = io::read_image((d / "first.png").string());
      if (fs::is_directory(d / "frames")) {
        for (std::size_t i = 0;; ++i) {
          char name[32];
          std::snprintf(name, sizeof name, "%04zu.png", i);
          if (!fs::exists(d / "frames" / name)) break;
          entry.frames.push_back(io::read_image((d / "frames" / name).string()));
        }
      }
      item.entry = std::move(entry);
    } catch (const Error& e) {
      item.load_error = e.what();
    }
    items.push_back(std::move(item));
  }
  return items;
}

inline nlohmann::json report_json(const MetricReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const MetricRow& row : r.rows) {
    nlohmann::json j{{"name", row.name}, {"ok", row.ok}};
    if (row.ok) {
      j["psnr_db"] = row.psnr;
      j["mse"] = row.mse;
      j["epe"] = row.epe;
      j["masked_pixels"] = row.masked_pixels;
      j["hints"] = nlohmann::json::array();
      for (const Hint& h : row.hints) j["hints"].push_back(io::hint_to_json(h));
    } else {
      j["error"] = row.error;
    }
    rows.push_back(j);
  }
  return {{"hint_count", r.hint_count}, {"seed", r.seed},        {"mean_psnr_db", r.mean_psnr},
          {"mean_epe", r.mean_epe},     {"failed", r.failed},    {"rows", rows}};
}

inline std::string report_table(const MetricReport& r) {
  std::ostringstream os;
  os << "k=" << r.hint_count << " seed=" << r.seed << "\n";
  os << std::left << std::setw(24) << "entry" << std::right << std::setw(12) << "psnr_db" << std::setw(12) << "epe"
     << std::setw(10) << "masked" << "  status\n";
  os << std::fixed << std::setprecision(3);
  for (const MetricRow& row : r.rows) {
    os << std::left << std::setw(24) << row.name << std::right;
    if (row.ok)
      os << std::setw(12) << row.psnr << std::setw(12) << row.epe << std::setw(10) << row.masked_pixels << "  ok\n";
    else
      os << std::setw(12) << "-" << std::setw(12) << "-" << std::setw(10) << "-" << "  failed: " << row.error << "\n";
  }
  os << std::left << std::setw(24) << "mean" << std::right << std::setw(12) << r.mean_psnr << std::setw(12)
     << r.mean_epe << std::setw(10) << "" << "  " << r.failed << " failed\n";
  return os.str();
}

inline int run_evaluate(const EvaluateOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    if (opt.hints != 1 && opt.hints != 3 && opt.hints != 5) throw ValidationError("hints", "must be 1, 3 or 5");
    const std::vector<DatasetItem> items = load_dataset(opt.dataset);
    EvaluationOptions eo;
    eo.m_factor = opt.m_factor;
    eo.hints.seed = opt.seed;
    eo.hints.position_only = opt.position_only;
    eo.workers = opt.workers;
    const MetricReport report = evaluate_pipeline(items, opt.hints, eo);
    out << report_table(report);
    if (!opt.report.empty()) {
      std::ofstream f(opt.report, std::ios::trunc);
      if (!f) throw IoError(opt.report, "cannot open for writing");
      f << report_json(report).dump(2) << '\n';
      if (!f) throw IoError(opt.report, "write failed");
    }
    return kExitOk;
  } catch (const Error& e) {
    return detail::report_error(err, e);
  }
}

}  // namespace fluidanim::cli
