#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "fluidanim/cli.hpp"
#include "fluidanim/service/http_service.hpp"
#include "support.hpp"

using namespace fluidanim;
using fa_test::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class Running {
 public:
  explicit Running(service::ServiceConfig config = {}) {
    config.log = &log_;
    svc_ = std::make_unique<service::HttpService>(config);
    port_ = svc_->bind_to_any_port();
    thread_ = std::thread([this] { svc_->listen_after_bind(); });
    svc_->server().wait_until_ready();
  }
  ~Running() {
    svc_->stop();
    thread_.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60, 0);
    return c;
  }
  service::HttpService& service() { return *svc_; }
  std::string log() const { return log_.str(); }

 private:
  std::ostringstream log_;
  std::unique_ptr<service::HttpService> svc_;
  int port_ = 0;
  std::thread thread_;
};

std::string bytes_str(const std::vector<std::uint8_t>& v) { return std::string(v.begin(), v.end()); }

std::string png_of(const ImageBuffer& img) { return bytes_str(io::encode_png(img)); }

struct Inputs {
  ImageBuffer image;
  MaskMap mask;
  json hints;
};

Inputs make_inputs(std::uint64_t seed, int w, int h) {
  std::mt19937_64 rng(seed);
  Inputs in{io::decode_png(io::encode_png(fa_test::random_image(rng, w, h))).image, MaskMap(w, h), json::array()};
  const int y0 = fa_test::uniform_int(rng, 0, h / 2), y1 = y0 + h / 3;
  for (int y = y0; y < y1; ++y)
    for (int x = 0; x < w; ++x) in.mask.set(x, y, 1.0f);
  for (int i = 0; i < 2; ++i) {
    const int x = fa_test::uniform_int(rng, 1, w / 2), y = fa_test::uniform_int(rng, y0, y1 - 1);
    in.hints.push_back({{"start", {x, y}}, {"end", {x + fa_test::uniform_int(rng, 1, w / 3), y}}});
  }
  return in;
}

std::string create_session(httplib::Client& c, const ImageBuffer& img) {
  auto r = c.Post("/sessions", png_of(img), "image/png");
  EXPECT_TRUE(r);
  if (!r) return "";
  EXPECT_EQ(r->status, 201) << r->body;
  return json::parse(r->body)["session_id"];
}

std::string setup(httplib::Client& c, const Inputs& in, const json& extra = json::object()) {
  const std::string id = create_session(c, in.image);
  auto m = c.Put("/sessions/" + id + "/mask", png_of(io::mask_to_image(in.mask)), "image/png");
  EXPECT_EQ(m->status, 204);
  json body = extra;
  body["hints"] = in.hints;
  auto h = c.Put("/sessions/" + id + "/hints", body.dump(), "application/json");
  EXPECT_EQ(h->status, 200) << h->body;
  return id;
}

json wait_done(httplib::Client& c, const std::string& id, std::vector<double>* progress = nullptr) {
  for (int i = 0; i < 6000; ++i) {
    auto r = c.Get("/sessions/" + id + "/status");
    if (!r) return json{};
    const json s = json::parse(r->body);
    if (progress) progress->push_back(s["progress"]);
    if (s["state"] != "rendering") return s;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return json{};
}

json error_of(const httplib::Result& r) { return json::parse(r->body)["error"]; }

Project library_project(const Inputs& in, int n_frames) {
  Project p;
  p.image = in.image;
  p.mask = in.mask;
  p.hints = io::hints_from_json(in.hints);
  p.params.n_frames = n_frames;
  p.render.n_frames = n_frames;
  return p;
}

}  // namespace

TEST(Service, HappyPath) {
  Running srv;
  auto c = srv.client();
  const Inputs in = make_inputs(1, 48, 32);
  const std::string id = setup(c, in, {{"params", {{"n_frames", 8}}}, {"format", "apng"}});

  auto state = c.Get("/sessions/" + id);
  ASSERT_EQ(state->status, 200);
  EXPECT_EQ(json::parse(state->body)["hints"].size(), 2u);
  EXPECT_TRUE(json::parse(state->body)["has_mask"]);

  auto mask = c.Get("/sessions/" + id + "/mask");
  ASSERT_EQ(mask->status, 200);
  const MaskMap back = io::decode_mask(std::span(reinterpret_cast<const std::uint8_t*>(mask->body.data()), mask->body.size()));
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_EQ(back[i], in.mask[i]);

  auto preview = c.Post("/sessions/" + id + "/preview?t=3", "", "text/plain");
  ASSERT_EQ(preview->status, 200) << preview->body;
  EXPECT_EQ(preview->get_header_value("X-Fluidanim-Frame"), "3");
  const ImageBuffer pv = io::decode_png(std::span(reinterpret_cast<const std::uint8_t*>(preview->body.data()), preview->body.size())).image;
  EXPECT_EQ(pv.width(), 24);
  EXPECT_EQ(pv.height(), 16);

  auto flo = c.Get("/sessions/" + id + "/flow.flo");
  ASSERT_EQ(flo->status, 200);
  const FlowField flow = io::decode_flo(std::span(reinterpret_cast<const std::uint8_t*>(flo->body.data()), flo->body.size()));
  EXPECT_EQ(flow.width(), 48);

  auto early = c.Get("/sessions/" + id + "/result");
  EXPECT_EQ(early->status, 409);

  auto start = c.Post("/sessions/" + id + "/render", "", "text/plain");
  ASSERT_EQ(start->status, 202);
  EXPECT_EQ(json::parse(start->body)["state"], "rendering");
  const json done = wait_done(c, id);
  ASSERT_EQ(done["state"], "done") << done.dump();
  EXPECT_EQ(done["progress"], 1.0);
  EXPECT_EQ(done["manifest"]["durations_ms"].size(), 8u);

  auto result = c.Get("/sessions/" + id + "/result");
  ASSERT_EQ(result->status, 200);
  EXPECT_EQ(result->get_header_value("Content-Type"), "image/apng");
  EXPECT_EQ(json::parse(result->get_header_value("X-Fluidanim-Manifest"))["width"], 48);
  const Project p = library_project(in, 8);
  EXPECT_EQ(result->body, bytes_str(io::encode_apng(render_sequence(p, project_render_config(p)))));
  auto manifest = c.Get("/sessions/" + id + "/result?part=manifest");
  EXPECT_EQ(json::parse(manifest->body)["format"], "animated_png");

  // Every request is one JSON log line.
  std::istringstream log(srv.log());
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const json j = json::parse(line);
    EXPECT_TRUE(j.contains("latency_ms"));
    EXPECT_TRUE(j.contains("status"));
    ++lines;
  }
  EXPECT_GE(lines, 10);
}

TEST(Service, ValidationErrorsNameTheField) {
  Running srv;
  auto c = srv.client();
  const Inputs in = make_inputs(2, 40, 30);
  const std::string id = create_session(c, in.image);

  const json hints_body{{"hints", in.hints}};
  auto no_mask = c.Put("/sessions/" + id + "/hints", hints_body.dump(), "application/json");
  EXPECT_EQ(no_mask->status, 400);
  EXPECT_EQ(error_of(no_mask)["field"], "mask");

  auto bad_mask = c.Put("/sessions/" + id + "/mask", png_of(io::mask_to_image(MaskMap(10, 10))), "image/png");
  EXPECT_EQ(bad_mask->status, 400);
  EXPECT_EQ(error_of(bad_mask)["field"], "mask");

  c.Put("/sessions/" + id + "/mask", png_of(io::mask_to_image(in.mask)), "image/png");
  json oob = hints_body;
  oob["hints"].push_back({{"start", {45, 3}}, {"end", {2, 3}}});
  auto r = c.Put("/sessions/" + id + "/hints", oob.dump(), "application/json");
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(error_of(r)["field"], "hints[2].start");
  EXPECT_FALSE(error_of(r)["message"].get<std::string>().empty());

  auto unknown = c.Put("/sessions/" + id + "/hints", R"({"hints":[],"colour":1})", "application/json");
  EXPECT_EQ(error_of(unknown)["field"], "colour");
  auto malformed = c.Put("/sessions/" + id + "/hints", "{", "application/json");
  EXPECT_EQ(malformed->status, 400);
  EXPECT_EQ(error_of(malformed)["field"], "body");
  auto bad_format = c.Put("/sessions/" + id + "/hints", json{{"hints", in.hints}, {"format", "png_sequence"}}.dump(),
                          "application/json");
  EXPECT_EQ(error_of(bad_format)["field"], "format");

  auto not_ready = c.Post("/sessions/" + id + "/render", "", "text/plain");
  EXPECT_EQ(not_ready->status, 400);
  EXPECT_EQ(error_of(not_ready)["field"], "hints");

  ASSERT_EQ(c.Put("/sessions/" + id + "/hints", hints_body.dump(), "application/json")->status, 200);
  for (const char* t : {"-1", "61", "x", ""}) {
    auto p = c.Post("/sessions/" + id + "/preview?t=" + std::string(t), "", "text/plain");
    EXPECT_EQ(p->status, 400) << t;
    EXPECT_EQ(error_of(p)["field"], "t");
  }

  auto junk = c.Post("/sessions", "not an image", "image/png");
  EXPECT_EQ(junk->status, 400);
  EXPECT_EQ(error_of(junk)["field"], "body");
}

TEST(Service, UnknownSessionIs404) {
  Running srv;
  auto c = srv.client();
  for (const std::string path : {"/sessions/abc123", "/sessions/abc123/status", "/sessions/abc123/result"}) {
    auto r = c.Get(path);
    EXPECT_EQ(r->status, 404);
    EXPECT_EQ(error_of(r)["field"], "session_id");
  }
  auto r = c.Post("/sessions/00ff/render", "", "text/plain");
  EXPECT_EQ(r->status, 404);
}

TEST(Service, SecondRenderWhileRunningIs409) {
  Running srv;
  auto c = srv.client();
  const std::string id = setup(c, make_inputs(3, 160, 120), {{"params", {{"n_frames", 60}}}});
  auto first = c.Post("/sessions/" + id + "/render", "", "text/plain");
  auto second = c.Post("/sessions/" + id + "/render", "", "text/plain");
  EXPECT_EQ(first->status, 202);
  EXPECT_EQ(second->status, 409);
  EXPECT_EQ(error_of(second)["field"], "render");
  EXPECT_EQ(wait_done(c, id)["state"], "done");
  EXPECT_EQ(c.Post("/sessions/" + id + "/render", "", "text/plain")->status, 202);
  EXPECT_EQ(wait_done(c, id)["state"], "done");
}

TEST(Service, OversizedUploadIs413) {
  service::ServiceConfig config;
  config.max_upload = 4096;
  Running srv(config);
  auto c = srv.client();
  auto r = c.Post("/sessions", std::string(8192, 'x'), "image/png");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 413);
  EXPECT_EQ(error_of(r)["field"], "body");
}

TEST(Service, ProgressIsMonotoneWhilePolling) {
  Running srv;
  auto c = srv.client();
  const std::string id = setup(c, make_inputs(4, 192, 128), {{"params", {{"n_frames", 60}}}});
  ASSERT_EQ(c.Post("/sessions/" + id + "/render", "", "text/plain")->status, 202);
  std::vector<double> seen;
  const json done = wait_done(c, id, &seen);
  ASSERT_EQ(done["state"], "done");
  ASSERT_GE(seen.size(), 2u);
  for (std::size_t i = 1; i < seen.size(); ++i) EXPECT_GE(seen[i], seen[i - 1]);
  EXPECT_EQ(seen.back(), 1.0);
  for (double p : seen) {
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
}

TEST(Service, ConcurrentSessionsStayIsolated) {
  service::ServiceConfig config;
  config.job_threads = 3;
  Running srv(config);
  constexpr int kSessions = 6;
  std::vector<Inputs> inputs;
  for (int i = 0; i < kSessions; ++i) inputs.push_back(make_inputs(100 + i, 40 + 4 * i, 28 + 2 * i));
  std::vector<std::string> results(kSessions);
  std::vector<std::thread> threads;
  for (int i = 0; i < kSessions; ++i)
    threads.emplace_back([&, i] {
      auto c = srv.client();
      const std::string id = setup(c, inputs[static_cast<std::size_t>(i)], {{"params", {{"n_frames", 6 + i}}}});
      c.Post("/sessions/" + id + "/render", "", "text/plain");
      if (wait_done(c, id)["state"] == "done") results[static_cast<std::size_t>(i)] = c.Get("/sessions/" + id + "/result")->body;
    });
  for (auto& t : threads) t.join();
  for (int i = 0; i < kSessions; ++i) {
    const Project p = library_project(inputs[static_cast<std::size_t>(i)], 6 + i);
    EXPECT_EQ(results[static_cast<std::size_t>(i)], bytes_str(io::encode_apng(render_sequence(p, project_render_config(p)))))
        << "session " << i;
  }
  EXPECT_EQ(srv.service().sessions().size(), static_cast<std::size_t>(kSessions));
}

TEST(Service, ApiAndCliProduceIdenticalBytes) {
  TempDir dir("svc_cli");
  const Inputs in = make_inputs(5, 64, 40);
  io::write_image(in.image, dir.file("in.png"));
  io::write_mask(in.mask, dir.file("mask.png"));
  cli::AnimateOptions opt;
  opt.image = dir.file("in.png");
  opt.mask = dir.file("mask.png");
  opt.hints = json{{"hints", in.hints}}.dump();
  opt.frames = 12;
  opt.format = "animated_png";
  opt.out = dir.file("out");
  std::ostringstream out, err;
  ASSERT_EQ(cli::run_animate(opt, out, err), 0) << err.str();
  std::ifstream f(dir.file("out/animation.png"), std::ios::binary);
  const std::string cli_bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Running srv;
  auto c = srv.client();
  const std::string id = setup(c, in, {{"params", {{"n_frames", 12}}}, {"format", "apng"}});
  ASSERT_EQ(c.Post("/sessions/" + id + "/render", "", "text/plain")->status, 202);
  ASSERT_EQ(wait_done(c, id)["state"], "done");
  EXPECT_EQ(c.Get("/sessions/" + id + "/result")->body, cli_bytes);
}

TEST(Service, GifFormatAndMultipartUpload) {
  Running srv;
  auto c = srv.client();
  const Inputs in = make_inputs(6, 32, 24);
  httplib::MultipartFormDataItems items{{"image", png_of(in.image), "in.png", "image/png"}};
  auto created = c.Post("/sessions", items);
  ASSERT_EQ(created->status, 201);
  const std::string id = json::parse(created->body)["session_id"];
  httplib::MultipartFormDataItems mask{{"mask", png_of(io::mask_to_image(in.mask)), "m.png", "image/png"}};
  ASSERT_EQ(c.Put("/sessions/" + id + "/mask", mask)->status, 204);
  const json body{{"hints", in.hints}, {"format", "gif"}, {"params", {{"n_frames", 4}}}, {"render", {{"fps", 20}}}};
  ASSERT_EQ(c.Put("/sessions/" + id + "/hints", body.dump(), "application/json")->status, 200);
  ASSERT_EQ(c.Post("/sessions/" + id + "/render", "", "text/plain")->status, 202);
  const json done = wait_done(c, id);
  ASSERT_EQ(done["state"], "done");
  EXPECT_EQ(done["manifest"]["durations_ms"], json::array({50.0, 50.0, 50.0, 50.0}));
  auto r = c.Get("/sessions/" + id + "/result");
  EXPECT_EQ(r->get_header_value("Content-Type"), "image/gif");
  EXPECT_EQ(r->body.substr(0, 6), "GIF89a");
}

TEST(Service, HintsResponseCarriesFlowStats) {
  Running srv;
  auto c = srv.client();
  const Inputs in = make_inputs(7, 30, 20);
  const std::string id = create_session(c, in.image);
  c.Put("/sessions/" + id + "/mask", png_of(io::mask_to_image(in.mask)), "image/png");
  auto r = c.Put("/sessions/" + id + "/hints", json{{"hints", in.hints}}.dump(), "application/json");
  const json flow = json::parse(r->body)["flow"];
  EXPECT_EQ(flow["kind"], "dense");
  EXPECT_EQ(flow["masked_pixels"], in.mask.count_nonzero());
  EXPECT_GT(flow["max_magnitude"].get<double>(), 0.0);
}

TEST(Service, SessionsSurviveRestartWithDataDir) {
  TempDir dir("svc_persist");
  service::ServiceConfig config;
  config.data_dir = dir.file("data");
  const Inputs in = make_inputs(8, 36, 24);
  std::string id;
  {
    Running srv(config);
    auto c = srv.client();
    id = setup(c, in, {{"params", {{"n_frames", 5}, {"sigma", 6.0}}}});
  }
  Running srv(config);
  auto c = srv.client();
  auto state = c.Get("/sessions/" + id);
  ASSERT_EQ(state->status, 200);
  const json s = json::parse(state->body);
  EXPECT_EQ(s["hints"].size(), 2u);
  EXPECT_EQ(s["params"]["sigma"], 6.0);
  EXPECT_EQ(s["params"]["n_frames"], 5);
  EXPECT_TRUE(s["has_mask"]);
  ASSERT_EQ(c.Post("/sessions/" + id + "/render", "", "text/plain")->status, 202);
  EXPECT_EQ(wait_done(c, id)["state"], "done");
}

TEST(Service, IdleSessionsAreEvicted) {
  TempDir dir("svc_ttl");
  service::ServiceConfig config;
  config.idle_ttl = std::chrono::seconds(1);
  config.data_dir = dir.file("data");
  Running srv(config);
  auto c = srv.client();
  const std::string id = create_session(c, make_inputs(9, 8, 8).image);
  EXPECT_EQ(c.Get("/sessions/" + id)->status, 200);
  EXPECT_TRUE(fs::exists(dir.path() / "data" / id));
  std::this_thread::sleep_for(std::chrono::milliseconds(2200));
  EXPECT_EQ(c.Get("/sessions/" + id)->status, 404);
  EXPECT_FALSE(fs::exists(dir.path() / "data" / id));
}

TEST(Service, ConfigFromEnvironment) {
  ::setenv("FM_PORT", "9123", 1);
  ::setenv("FM_MAX_UPLOAD", "1000", 1);
  ::setenv("FM_DATA_DIR", "/tmp/fa_env", 1);
  const service::ServiceConfig c = service::config_from_env();
  EXPECT_EQ(c.port, 9123);
  EXPECT_EQ(c.max_upload, 1000u);
  EXPECT_EQ(c.data_dir, "/tmp/fa_env");
  ::setenv("FM_PORT", "http", 1);
  EXPECT_THROW(service::config_from_env(), ValidationError);
  ::unsetenv("FM_PORT");
  ::unsetenv("FM_MAX_UPLOAD");
  ::unsetenv("FM_DATA_DIR");
}
