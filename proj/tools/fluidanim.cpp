#include <csignal>
#include <iostream>

#include "CLI11.hpp"

#include "fluidanim/cli.hpp"
#include "fluidanim/service/http_service.hpp"

namespace {

fluidanim::service::HttpService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  using namespace fluidanim;
  CLI::App app{"Animate fluid regions of a still image from motion hints"};
  app.require_subcommand(1);

  cli::AnimateOptions a;
  auto* animate = app.add_subcommand("animate", "render an animation from an image, a mask and hints");
  animate->add_option("--image", a.image, "input image (PNG or PNM)");
  animate->add_option("--mask", a.mask, "grayscale mask, same size as the image");
  animate->add_option("--hints", a.hints, "project file, hints JSON, or x0,y0,x1,y1[,speed];...");
  animate->add_option("--sigma", a.sigma, "Gaussian falloff in pixels (default 0.1 x diagonal)");
  animate->add_option("--frames", a.frames, "frames per loop")->check(CLI::PositiveNumber);
  animate->add_option("--out", a.out, "output directory")->capture_default_str();
  animate->add_option("--format", a.format, "png_sequence | animated_png | gif")->capture_default_str();
  animate->add_option("--speed-scale", a.speed_scale, "global multiplier on the flow");
  animate->add_option("--refined-flow", a.refined_flow, ".flo used verbatim instead of the synthesized flow");
  animate->add_option("--fps", a.fps, "playback rate");
  animate->add_option("--workers", a.workers, "threads")->capture_default_str();

  cli::EvaluateOptions e;
  auto* evaluate = app.add_subcommand("evaluate", "hint-count study on a flow dataset");
  evaluate->add_option("--dataset", e.dataset, "dataset directory")->required();
  evaluate->add_option("--hints", e.hints, "hints per entry")->check(CLI::IsMember({1, 3, 5}))->capture_default_str();
  evaluate->add_option("--report", e.report, "write the report as JSON here");
  evaluate->add_option("--mask-factor", e.m_factor, "mask threshold multiple of the mean squared magnitude")
      ->capture_default_str();
  evaluate->add_option("--seed", e.seed, "clustering seed")->capture_default_str();
  evaluate->add_flag("--position-only", e.position_only, "cluster on position only");
  evaluate->add_option("--workers", e.workers, "threads")->capture_default_str();

  auto* serve = app.add_subcommand("serve", "run the HTTP service (FM_PORT, FM_DATA_DIR, FM_MAX_UPLOAD)");
  std::string host = "0.0.0.0";
  int job_threads = 2;
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--jobs", job_threads, "concurrent render jobs")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : cli::kExitValidation;
  }

  if (*animate) return cli::run_animate(a, std::cout, std::cerr);
  if (*evaluate) return cli::run_evaluate(e, std::cout, std::cerr);

  try {
    service::ServiceConfig config;
    config.host = host;
    config.job_threads = job_threads;
    config = service::config_from_env(config);
    service::HttpService svc(config);
    g_service = &svc;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << nlohmann::json{{"event", "listening"}, {"host", config.host}, {"port", config.port}}.dump() << '\n';
    if (!svc.listen()) {
      std::cerr << nlohmann::json{{"error", {{"kind", "io"}, {"message", "cannot listen"}}}}.dump() << '\n';
      return cli::kExitIo;
    }
    g_service = nullptr;
  } catch (const std::exception& ex) {
    std::cerr << nlohmann::json{{"error", {{"kind", "validation"}, {"message", ex.what()}}}}.dump() << '\n';
    return cli::kExitValidation;
  }
  return 0;
}
