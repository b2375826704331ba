#include <gtest/gtest.h>

#include <chrono>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ffield/synthetic.hpp"
#include "ffield/trainer.hpp"
#include "service/server.hpp"
#include "test_support.hpp"

// After the Eigen headers; see server.cpp.
#include <httplib.h>

namespace ffield {
namespace {

using nlohmann::json;

std::string Slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Comma-separated row-major pose for the query string.
std::string PoseQuery(const Pose& p, int values = 16) {
  std::string s;
  for (int i = 0; i < values; ++i) {
    if (i) s += ",";
    s += std::to_string(p(i / 4, i % 4));
  }
  return s;
}

class Http : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("http");
    SceneSpec spec = SceneSpec::Default();
    spec.width = 24;
    spec.height = 18;
    spec.train_views = 4;
    spec.heldout_views = 1;
    GenerateScene(spec, dir_->str());
    pose_ = spec.heldout_poses()[0];

    EncodingConfig enc;
    enc.hash_levels = 4;
    enc.table_size_log2 = 10;
    TrainConfig tc;
    tc.iterations = 3;
    tc.batch_rays = 32;
    tc.samples = 8;
    TrainOffline(LoadScene(dir_->str()), enc, FieldConfig{}, tc, {*dir_ / "model.ffld", ""});

    service::ServerOptions o;
    o.port = 0;
    o.default_width = 12;
    o.default_height = 9;
    o.default_samples = 8;
    server_ = new service::Server(o);
    port_ = server_->start();
  }

  static void TearDownTestSuite() {
    delete server_;
    delete dir_;
  }

  static httplib::Client Client() {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60, 0);
    return c;
  }

  static std::string OpenOffline() {
    auto c = Client();
    const json body{{"checkpoint", *dir_ / "model.ffld"}};
    auto r = c.Post("/session", body.dump(), "application/json");
    EXPECT_EQ(r->status, 201) << r->body;
    return json::parse(r->body)["id"].get<std::string>();
  }

  static std::string OpenOnline() {
    auto c = Client();
    const json body{{"mode", "online"},
                    {"scene", dir_->str()},
                    {"train",
                     {{"batch_rays", 32},
                      {"samples", 8},
                      {"hash_levels", 4},
                      {"table_size_log2", 10},
                      {"snapshot_interval", 2}}}};
    auto r = c.Post("/session", body.dump(), "application/json");
    EXPECT_EQ(r->status, 201) << r->body;
    return json::parse(r->body)["id"].get<std::string>();
  }

  static httplib::Result PostKeyframe(const std::string& id, int frame) {
    char stem[16];
    std::snprintf(stem, sizeof(stem), "%05d", frame);
    const std::filesystem::path f = dir_->path() / "frames";
    const std::string s(stem);
    httplib::MultipartFormDataItems items = {
        {"rgb", Slurp(f / (s + ".rgb.png")), "rgb.png", "image/png"},
        {"depth", Slurp(f / (s + ".depth.png")), "depth.png", "image/png"},
        {"pose", Slurp(f / (s + ".pose.txt")), "pose.txt", "text/plain"},
        {"feat", Slurp(f / (s + ".feat.bin")), "feat.bin", "application/octet-stream"},
        {"frame_id", std::to_string(frame), "", ""},
    };
    auto c = Client();
    return c.Post(("/session/" + id + "/keyframe").c_str(), items);
  }

  static json Status(const std::string& id) {
    auto c = Client();
    auto r = c.Get(("/session/" + id + "/status").c_str());
    EXPECT_EQ(r->status, 200);
    return json::parse(r->body);
  }

  static testing::TempDir* dir_;
  static service::Server* server_;
  static int port_;
  static Pose pose_;
};

testing::TempDir* Http::dir_ = nullptr;
service::Server* Http::server_ = nullptr;
int Http::port_ = 0;
Pose Http::pose_;

TEST_F(Http, Health) {
  auto c = Client();
  auto r = c.Get("/health");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body)["ok"], true);
}

TEST_F(Http, UnknownSessionIs404) {
  auto c = Client();
  EXPECT_EQ(c.Get("/session/nope/status")->status, 404);
  EXPECT_EQ(c.Get(("/session/nope/render?pose=" + PoseQuery(pose_)).c_str())->status, 404);
  EXPECT_EQ(c.Delete("/session/nope")->status, 404);
  const auto r = c.Post("/session/nope/prompts", R"({"labels":["wall"]})", "application/json");
  EXPECT_EQ(r->status, 404);
  EXPECT_NE(json::parse(r->body)["error"].get<std::string>().find("nope"), std::string::npos);
}

TEST_F(Http, MalformedRequestsAre400) {
  auto c = Client();
  EXPECT_EQ(c.Post("/session", "{not json", "application/json")->status, 400);
  EXPECT_EQ(c.Post("/session", R"({"mode":"sideways"})", "application/json")->status, 400);
  EXPECT_EQ(c.Post("/session", R"({"mode":"online"})", "application/json")->status, 400);
  EXPECT_EQ(c.Post("/session", R"({"checkpoint":"/no/such.ffld"})", "application/json")->status,
            400);

  const std::string id = OpenOffline();
  const std::string base = "/session/" + id + "/render?pose=";
  EXPECT_EQ(c.Get(("/session/" + id + "/render").c_str())->status, 400);
  auto r = c.Get((base + PoseQuery(pose_, 15)).c_str());
  EXPECT_EQ(r->status, 400);
  EXPECT_NE(json::parse(r->body)["error"].get<std::string>().find("15"), std::string::npos);
  EXPECT_EQ(c.Get((base + PoseQuery(pose_) + "&width=0").c_str())->status, 400);
  EXPECT_EQ(c.Get((base + PoseQuery(pose_) + "&mode=xray").c_str())->status, 400);
  EXPECT_EQ(c.Post(("/session/" + id + "/prompts").c_str(), R"({"labels":["sofa"]})",
                   "application/json")
                ->status,
            400);
  EXPECT_EQ(c.Post(("/session/" + id + "/prompts").c_str(),
                   R"({"vectors":[{"label":"x","embedding":[1,2]}]})", "application/json")
                ->status,
            400);
  EXPECT_EQ(c.Delete(("/session/" + id).c_str())->status, 200);
  EXPECT_EQ(c.Get(("/session/" + id + "/status").c_str())->status, 404);
}

TEST_F(Http, OfflineSessionConflicts) {
  const std::string id = OpenOffline();
  auto c = Client();
  auto seg = c.Get(("/session/" + id + "/render?mode=segmentation&pose=" + PoseQuery(pose_)).c_str());
  EXPECT_EQ(seg->status, 409);
  auto kf = PostKeyframe(id, 0);
  EXPECT_EQ(kf->status, 409);
  const json st = Status(id);
  EXPECT_EQ(st["mode"], "offline");
  EXPECT_EQ(st["snapshot_version"], 1);
  EXPECT_EQ(st["intrinsics"]["width"], 24);
}

TEST_F(Http, ColorAndDepthPng) {
  const std::string id = OpenOffline();
  auto c = Client();
  for (const char* mode : {"color", "depth"}) {
    auto r = c.Get(("/session/" + id + "/render?mode=" + mode + "&pose=" + PoseQuery(pose_)).c_str());
    ASSERT_EQ(r->status, 200) << r->body;
    EXPECT_EQ(r->get_header_value("Content-Type"), "image/png");
    EXPECT_EQ(r->get_header_value("X-Snapshot-Version"), "1");
    const Bytes png(r->body.begin(), r->body.end());
    const PngImage img = DecodePng(png);
    EXPECT_EQ(img.width, 12);
    EXPECT_EQ(img.height, 9);
  }
}

TEST_F(Http, PromptsChangeWithoutNewSnapshotAndReorderIsInvariant) {
  const std::string id = OpenOffline();
  auto c = Client();
  const std::string seg =
      "/session/" + id + "/render?mode=segmentation&format=json&pose=" + PoseQuery(pose_);

  auto p1 = c.Post(("/session/" + id + "/prompts").c_str(),
                   R"({"labels":["wall","box","sphere"]})", "application/json");
  ASSERT_EQ(p1->status, 200) << p1->body;
  auto a = c.Get(seg.c_str());
  ASSERT_EQ(a->status, 200) << a->body;
  const json ja = json::parse(a->body);

  auto p2 = c.Post(("/session/" + id + "/prompts").c_str(),
                   R"({"labels":["sphere","wall","box"]})", "application/json");
  ASSERT_EQ(p2->status, 200);
  EXPECT_EQ(json::parse(p1->body)["snapshot_version"], json::parse(p2->body)["snapshot_version"]);
  auto b = c.Get(seg.c_str());
  ASSERT_EQ(b->status, 200);
  const json jb = json::parse(b->body);
  EXPECT_EQ(ja["snapshot_version"], jb["snapshot_version"]);
  EXPECT_EQ(jb["labels"], json({"sphere", "wall", "box"}));

  const auto la = ja["labels"].get<std::vector<std::string>>();
  const auto lb = jb["labels"].get<std::vector<std::string>>();
  const auto ca = ja["classes"].get<std::vector<int>>();
  const auto cb = jb["classes"].get<std::vector<int>>();
  ASSERT_EQ(ca.size(), 12u * 9u);
  ASSERT_EQ(ca.size(), cb.size());
  auto name = [](const std::vector<std::string>& l, int c) {
    return c == static_cast<int>(l.size()) ? std::string("<background>") : l[c];
  };
  for (std::size_t i = 0; i < ca.size(); ++i) EXPECT_EQ(name(la, ca[i]), name(lb, cb[i])) << i;

  // Raw vectors of the wrong width are refused; the right width replaces the set.
  std::vector<float> e(8, 0.0f);
  e[0] = 1.0f;
  const json vec{{"vectors", {{{"label", "probe"}, {"embedding", e}}}}};
  auto p3 = c.Post(("/session/" + id + "/prompts").c_str(), vec.dump(), "application/json");
  ASSERT_EQ(p3->status, 200) << p3->body;
  EXPECT_EQ(Status(id)["labels"], json({"probe"}));
  auto png = c.Get(("/session/" + id + "/render?mode=segmentation&pose=" + PoseQuery(pose_)).c_str());
  ASSERT_EQ(png->status, 200);
  EXPECT_EQ(png->get_header_value("X-Labels"), "probe");
}

TEST_F(Http, OnlineSessionTrainsOnUploadedKeyframes) {
  const std::string id = OpenOnline();
  const json st0 = Status(id);
  EXPECT_EQ(st0["mode"], "online");
  EXPECT_EQ(st0["feature_dim"], 8);
  for (int f = 0; f < 3; ++f) {
    auto r = PostKeyframe(id, f);
    ASSERT_EQ(r->status, 202) << r->body;
  }
  // Bad keyframes are rejected without stopping the session.
  auto c = Client();
  httplib::MultipartFormDataItems missing = {{"rgb", "x", "rgb.png", "image/png"}};
  EXPECT_EQ(c.Post(("/session/" + id + "/keyframe").c_str(), missing)->status, 400);
  EXPECT_EQ(c.Post(("/session/" + id + "/keyframe").c_str(), "{}", "application/json")->status, 400);

  std::int64_t first = -1, later = -1;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(60);
  while (std::chrono::steady_clock::now() < deadline) {
    const json st = Status(id);
    const std::int64_t it = st["iteration"].get<std::int64_t>();
    if (first < 0 && it > 0) first = it;
    if (first > 0 && it > first) {
      later = it;
      EXPECT_EQ(st["keyframes"], 3);
      EXPECT_EQ(st["training"], true);
      EXPECT_EQ(st["last_error"], "");
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  EXPECT_GT(first, 0);
  EXPECT_GT(later, first);

  auto r = c.Get(("/session/" + id + "/render?pose=" + PoseQuery(pose_)).c_str());
  ASSERT_EQ(r->status, 200);
  EXPECT_GE(std::stoll(r->get_header_value("X-Snapshot-Version")), 1);
  EXPECT_EQ(c.Delete(("/session/" + id).c_str())->status, 200);
}

}  // namespace
}  // namespace ffield
