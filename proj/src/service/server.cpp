#include "service/server.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

// Eigen before httplib: <resolv.h> defines a _res macro that collides with
// Eigen parameter names.
#include "ffield/renderer.hpp"
#include "ffield/scene_io.hpp"
#include "ffield/segmentation.hpp"
#include "ffield/trainer.hpp"

#include <httplib.h>

namespace ffield::service {
namespace {

using nlohmann::json;

// Thrown by handlers to produce a specific status code.
struct HttpError {
  int status;
  std::string message;
};

[[noreturn]] void Reject(int status, const std::string& message) {
  throw HttpError{status, message};
}

int StatusFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kFormat:
    case ErrorCode::kShape:
    case ErrorCode::kNotFound:
    case ErrorCode::kIo:
      return 400;
    case ErrorCode::kState:
      return 409;
    default:
      return 500;
  }
}

void SendError(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), "application/json");
}

class Session {
 public:
  Session(std::string id, Checkpoint checkpoint, std::shared_ptr<const EmbeddingSet> dictionary)
      : id_(std::move(id)), dictionary_(std::move(dictionary)) {
    if (!checkpoint.intrinsics) {
      Fail(ErrorCode::kFormat, "checkpoint carries no camera intrinsics");
    }
    intrinsics_ = *checkpoint.intrinsics;
    fixed_ = std::make_shared<ParameterSnapshot>(
        ParameterSnapshot{1, std::move(checkpoint.model), intrinsics_});
  }

  Session(std::string id, FieldModel<float> model, TrainConfig config, CameraIntrinsics intrinsics,
          std::size_t feature_dim, std::shared_ptr<const EmbeddingSet> dictionary)
      : id_(std::move(id)),
        dictionary_(std::move(dictionary)),
        intrinsics_(intrinsics),
        trainer_(std::make_unique<OnlineTrainer<float>>(std::move(model), config, intrinsics,
                                                        feature_dim)) {
    trainer_->start();
  }

  ~Session() {
    if (trainer_) trainer_->stop();
  }

  const std::string& id() const { return id_; }
  bool online() const { return trainer_ != nullptr; }
  const CameraIntrinsics& intrinsics() const { return intrinsics_; }

  SnapshotPtr snapshot() const { return trainer_ ? trainer_->snapshot() : fixed_; }

  std::shared_ptr<const EmbeddingSet> prompts() const {
    std::lock_guard<std::mutex> lock(read_mutex_);
    return prompts_;
  }

  void set_prompts(const json& body) {
    std::lock_guard<std::mutex> write(write_mutex_);
    const std::size_t d = static_cast<std::size_t>(snapshot()->model.field().feature_dim);
    EmbeddingSet set;
    if (body.contains("labels")) {
      if (!body["labels"].is_array()) Reject(400, "'labels' must be an array of strings");
      std::vector<std::string> labels;
      for (const json& l : body["labels"]) {
        if (!l.is_string()) Reject(400, "'labels' must be an array of strings");
        labels.push_back(l.get<std::string>());
      }
      if (!dictionary_) Reject(400, "session has no embedding dictionary; send vectors instead");
      set = EncodeLabels(labels, DictionaryEncoder(*dictionary_));
    } else if (body.contains("vectors")) {
      if (!body["vectors"].is_array() || body["vectors"].empty()) {
        Reject(400, "'vectors' must be a non-empty array");
      }
      const json& rows = body["vectors"];
      set.matrix = Tensor<float>({rows.size(), d});
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const json& r = rows[i];
        if (!r.is_object() || !r.contains("label") || !r["label"].is_string() ||
            !r.contains("embedding") || !r["embedding"].is_array()) {
          Reject(400, "each vector needs a string 'label' and an 'embedding' array");
        }
        const std::string label = r["label"].get<std::string>();
        if (std::find(set.labels.begin(), set.labels.end(), label) != set.labels.end()) {
          Reject(400, "duplicate label '" + label + "'");
        }
        if (r["embedding"].size() != d) {
          Reject(400, "embedding for '" + label + "' has " + std::to_string(r["embedding"].size()) +
                          " values, the field has D=" + std::to_string(d));
        }
        for (std::size_t j = 0; j < d; ++j) {
          if (!r["embedding"][j].is_number()) Reject(400, "embedding values must be numbers");
          set.matrix(i, j) = r["embedding"][j].get<float>();
        }
        set.labels.push_back(label);
      }
    } else {
      Reject(400, "prompts need 'labels' or 'vectors'");
    }
    if (set.dim() != d) {
      Reject(400, "prompt embeddings have D=" + std::to_string(set.dim()) + ", the field has D=" +
                      std::to_string(d));
    }
    auto shared = std::make_shared<const EmbeddingSet>(std::move(set));
    std::lock_guard<std::mutex> lock(read_mutex_);
    prompts_ = std::move(shared);
  }

  std::size_t submit(PosedFrame frame) {
    std::lock_guard<std::mutex> write(write_mutex_);
    if (!trainer_) Reject(409, "session " + id_ + " is a checkpoint session; keyframes need online mode");
    trainer_->submit(std::move(frame));
    return ++submitted_;
  }

  std::int64_t next_frame_id() const { return static_cast<std::int64_t>(submitted_); }

  json status() const {
    const SnapshotPtr snap = snapshot();
    const auto prompts = this->prompts();
    json j{{"id", id_},
           {"mode", online() ? "online" : "offline"},
           {"snapshot_version", snap->version},
           {"feature_dim", snap->model.field().feature_dim},
           {"labels", prompts ? prompts->labels : std::vector<std::string>{}},
           {"intrinsics",
            {{"fx", intrinsics_.fx},
             {"fy", intrinsics_.fy},
             {"cx", intrinsics_.cx},
             {"cy", intrinsics_.cy},
             {"width", intrinsics_.width},
             {"height", intrinsics_.height}}}};
    if (trainer_) {
      j["iteration"] = trainer_->iteration();
      j["keyframes"] = trainer_->keyframe_count();
      j["pending"] = trainer_->pending_count();
      j["training"] = trainer_->running();
      j["last_error"] = trainer_->last_error();
    } else {
      j["iteration"] = 0;
      j["keyframes"] = 0;
      j["pending"] = 0;
      j["training"] = false;
      j["last_error"] = "";
    }
    return j;
  }

 private:
  std::string id_;
  std::shared_ptr<const EmbeddingSet> dictionary_;
  CameraIntrinsics intrinsics_;
  SnapshotPtr fixed_;
  std::unique_ptr<OnlineTrainer<float>> trainer_;

  std::mutex write_mutex_;
  mutable std::mutex read_mutex_;
  std::shared_ptr<const EmbeddingSet> prompts_;
  std::atomic<std::size_t> submitted_{0};
};

json ParseBody(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) Reject(400, "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    Reject(400, std::string("malformed JSON: ") + e.what());
  }
}

template <typename V>
V Field(const json& j, const char* key, V fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j[key].get<V>();
  } catch (const json::exception&) {
    Reject(400, std::string("field '") + key + "' has the wrong type");
  }
}

int IntParam(const httplib::Request& req, const char* key, int fallback, int lo, int hi) {
  if (!req.has_param(key)) return fallback;
  const std::string text = req.get_param_value(key);
  int v = 0;
  try {
    std::size_t used = 0;
    v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    Reject(400, std::string("'") + key + "' is not an integer: " + text);
  }
  if (v < lo || v > hi) {
    Reject(400, std::string("'") + key + "' must be in [" + std::to_string(lo) + ", " +
                    std::to_string(hi) + "]");
  }
  return v;
}

Pose PoseParam(const httplib::Request& req) {
  if (!req.has_param("pose")) Reject(400, "missing 'pose' (16 reals, row-major camera-to-world)");
  std::string text = req.get_param_value("pose");
  std::replace(text.begin(), text.end(), ',', ' ');
  try {
    return ParsePose(text, "pose");
  } catch (const Error& e) {
    Reject(400, e.what());
  }
}

std::string SnapshotHeader(const SnapshotPtr& snap) { return std::to_string(snap->version); }

}  // namespace

struct Server::Impl {
  ServerOptions options;
  httplib::Server http;
  std::thread listener;
  int port = 0;

  std::mutex sessions_mutex;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  std::uint64_t next_id = 1;

  std::mutex wait_mutex;
  std::condition_variable wait_cv;
  bool stopped = false;

  explicit Impl(ServerOptions o) : options(std::move(o)) { routes(); }

  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard<std::mutex> lock(sessions_mutex);
    const auto it = sessions.find(id);
    if (it == sessions.end()) Reject(404, "unknown session '" + id + "'");
    return it->second;
  }

  std::string new_id() {
    std::lock_guard<std::mutex> lock(sessions_mutex);
    return "s" + std::to_string(next_id++);
  }

  static std::shared_ptr<const EmbeddingSet> LoadDictionary(const std::string& path) {
    if (path.empty() || !std::filesystem::exists(path)) return nullptr;
    return std::make_shared<const EmbeddingSet>(LoadEmbeddings(path));
  }

  std::shared_ptr<Session> open(const json& body) {
    const std::string mode = Field<std::string>(body, "mode", body.contains("checkpoint") ? "offline" : "online");
    std::string embeddings = Field<std::string>(body, "embeddings", "");
    if (mode == "offline") {
      const std::string checkpoint = Field<std::string>(body, "checkpoint", "");
      if (checkpoint.empty()) Reject(400, "offline sessions need 'checkpoint'");
      if (embeddings.empty()) {
        embeddings = (std::filesystem::path(checkpoint).parent_path() / "embeddings.txt").string();
      }
      Checkpoint ck = LoadCheckpoint(checkpoint);
      return std::make_shared<Session>(new_id(), std::move(ck), LoadDictionary(embeddings));
    }
    if (mode != "online") Reject(400, "'mode' must be 'offline' or 'online'");

    CameraIntrinsics k;
    SceneBounds bounds;
    std::size_t feature_dim = 0;
    const std::string scene = Field<std::string>(body, "scene", "");
    if (!scene.empty()) {
      const std::filesystem::path dir(scene);
      k = ReadIntrinsics((dir / "intrinsics.txt").string());
      bounds = ReadBounds((dir / "bounds.txt").string());
      if (embeddings.empty()) embeddings = (dir / "embeddings.txt").string();
    }
    if (body.contains("intrinsics")) {
      const json& ki = body["intrinsics"];
      k.fx = Field<double>(ki, "fx", 0.0);
      k.fy = Field<double>(ki, "fy", 0.0);
      k.cx = Field<double>(ki, "cx", 0.0);
      k.cy = Field<double>(ki, "cy", 0.0);
      k.width = Field<int>(ki, "width", 0);
      k.height = Field<int>(ki, "height", 0);
    }
    if (body.contains("bounds")) {
      const auto b = Field<std::vector<double>>(body, "bounds", {});
      if (b.size() != 6) Reject(400, "'bounds' needs 6 values (min xyz, max xyz)");
      bounds.min = Vec3(b[0], b[1], b[2]);
      bounds.max = Vec3(b[3], b[4], b[5]);
    }
    if (scene.empty() && (!body.contains("intrinsics") || !body.contains("bounds"))) {
      Reject(400, "online sessions need 'scene' or both 'intrinsics' and 'bounds'");
    }
    k.validate();
    bounds.validate();
    auto dictionary = LoadDictionary(embeddings);
    feature_dim = Field<std::size_t>(body, "feature_dim", dictionary ? dictionary->dim() : 0);

    EncodingConfig enc;
    FieldConfig fc;
    TrainConfig tc;
    const json train = body.contains("train") ? body["train"] : json::object();
    enc.table_size_log2 = Field<int>(train, "table_size_log2", 15);
    enc.hash_levels = Field<int>(train, "hash_levels", 12);
    tc.batch_rays = Field<int>(train, "batch_rays", 512);
    tc.samples = Field<int>(train, "samples", 64);
    tc.learning_rate = Field<double>(train, "learning_rate", 1e-2);
    tc.seed = Field<std::uint64_t>(train, "seed", 0);
    tc.snapshot_interval = Field<int>(train, "snapshot_interval", 25);
    fc.feature_dim = feature_dim > 0 ? static_cast<int>(feature_dim) : fc.feature_dim;
    enc.validate();
    fc.validate();
    tc.validate();
    FieldModel<float> model(enc, fc, bounds, tc.seed);
    return std::make_shared<Session>(new_id(), std::move(model), tc, k, feature_dim,
                                     std::move(dictionary));
  }

  template <typename F>
  void handle(const httplib::Request& req, httplib::Response& res, F&& body) {
    try {
      body(req, res);
    } catch (const HttpError& e) {
      SendError(res, e.status, e.message);
    } catch (const Error& e) {
      SendError(res, StatusFor(e.code()), e.what());
    } catch (const std::exception& e) {
      SendError(res, 500, e.what());
    }
  }

  void render(const httplib::Request& req, httplib::Response& res) {
    const auto session = find(req.matches[1]);
    const Pose pose = PoseParam(req);
    const std::string mode = req.has_param("mode") ? req.get_param_value("mode") : "color";
    const std::string format = req.has_param("format") ? req.get_param_value("format") : "png";
    if (format != "png" && format != "json") Reject(400, "'format' must be png or json");
    const int width = IntParam(req, "width", options.default_width, 1, 4096);
    const int height = IntParam(req, "height", options.default_height, 1, 4096);
    const int samples = IntParam(req, "samples", options.default_samples, 1, 4096);

    const SnapshotPtr snap = session->snapshot();
    const CameraIntrinsics& k = session->intrinsics();
    res.set_header("X-Snapshot-Version", SnapshotHeader(snap));

    if (mode == "color" || mode == "depth") {
      if (format == "json") Reject(400, "json output is only available for segmentation");
      RenderOptions ro;
      ro.maps = (mode == "color" ? kMapColor : kMapDepth) | kMapOpacity;
      ro.samples = samples;
      ro.width = width;
      ro.height = height;
      const RenderedMaps maps = RenderMaps(snap->model, pose, k, ro);
      const Bytes png = mode == "color" ? EncodeColorPng(maps) : EncodeDepthPng(maps);
      res.set_content(std::string(png.begin(), png.end()), "image/png");
      return;
    }
    if (mode != "segmentation") Reject(400, "'mode' must be color, depth or segmentation");
    const auto prompts = session->prompts();
    if (!prompts) Reject(409, "no prompts set; POST /session/" + session->id() + "/prompts first");
    SegmentOptions so;
    so.samples = samples;
    so.width = width;
    so.height = height;
    so.cosine = req.has_param("cosine") && req.get_param_value("cosine") == "1";
    so.keep_class_scores = format == "json";
    const SegmentationMap map = SegmentView(snap->model, pose, k, *prompts, so);
    if (format == "png") {
      const Bytes png = EncodeSegmentationPng(map);
      res.set_header("X-Labels", [&] {
        std::string s;
        for (const std::string& l : map.labels) s += (s.empty() ? "" : ",") + l;
        return s;
      }());
      res.set_content(std::string(png.begin(), png.end()), "image/png");
      return;
    }
    json counts = json::array();
    std::vector<std::size_t> per_class(map.labels.size() + 1, 0);
    for (const std::int32_t c : map.classes) ++per_class[static_cast<std::size_t>(c)];
    for (std::size_t c = 0; c < map.labels.size(); ++c) {
      counts.push_back({{"label", map.labels[c]}, {"pixels", per_class[c]}});
    }
    const json j{{"snapshot_version", snap->version},
                 {"width", map.width},
                 {"height", map.height},
                 {"labels", map.labels},
                 {"background", map.background()},
                 {"classes", map.classes},
                 {"scores", map.scores},
                 {"class_scores", map.class_scores},
                 {"summary", counts}};
    res.set_content(j.dump(), "application/json");
  }

  void keyframe(const httplib::Request& req, httplib::Response& res) {
    const auto session = find(req.matches[1]);
    if (!session->online()) {
      Reject(409, "session " + session->id() + " is a checkpoint session; keyframes need online mode");
    }
    if (!req.is_multipart_form_data()) Reject(400, "keyframes are multipart/form-data uploads");
    if (!req.has_file("rgb") || !req.has_file("pose")) Reject(400, "keyframe needs 'rgb' and 'pose' parts");
    std::int64_t id = session->next_frame_id();
    if (req.has_file("frame_id")) {
      try {
        id = std::stoll(req.get_file_value("frame_id").content);
      } catch (const std::exception&) {
        Reject(400, "'frame_id' is not an integer");
      }
    }
    auto bytes = [&](const char* key) {
      const std::string& c = req.get_file_value(key).content;
      return Bytes(c.begin(), c.end());
    };
    const Bytes rgb = bytes("rgb");
    const Bytes depth = req.has_file("depth") ? bytes("depth") : Bytes();
    const Bytes feat = req.has_file("feat") ? bytes("feat") : Bytes();
    PosedFrame frame;
    try {
      frame = DecodeFrame(id, rgb, req.has_file("depth") ? &depth : nullptr,
                          req.get_file_value("pose").content,
                          req.has_file("feat") ? &feat : nullptr);
    } catch (const Error& e) {
      Reject(400, e.what());
    }
    try {
      session->submit(std::move(frame));
    } catch (const Error& e) {
      Reject(e.code() == ErrorCode::kState ? 409 : 400, e.what());
    }
    res.status = 202;
    res.set_content(session->status().dump(), "application/json");
  }

  void routes() {
    http.Post("/session", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const httplib::Request& q, httplib::Response& r) {
        auto session = open(ParseBody(q));
        {
          std::lock_guard<std::mutex> lock(sessions_mutex);
          sessions[session->id()] = session;
        }
        r.status = 201;
        r.set_content(session->status().dump(), "application/json");
      });
    });
    http.Delete(R"(/session/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const httplib::Request& q, httplib::Response& r) {
        std::shared_ptr<Session> removed;
        {
          std::lock_guard<std::mutex> lock(sessions_mutex);
          const auto it = sessions.find(q.matches[1]);
          if (it == sessions.end()) Reject(404, "unknown session '" + std::string(q.matches[1]) + "'");
          removed = std::move(it->second);
          sessions.erase(it);
        }
        r.set_content(json{{"closed", removed->id()}}.dump(), "application/json");
      });
    });
    http.Get(R"(/session/([^/]+)/status)", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const httplib::Request& q, httplib::Response& r) {
        r.set_content(find(q.matches[1])->status().dump(), "application/json");
      });
    });
    http.Post(R"(/session/([^/]+)/prompts)", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const httplib::Request& q, httplib::Response& r) {
        const auto session = find(q.matches[1]);
        session->set_prompts(ParseBody(q));
        const json j{{"labels", session->prompts()->labels},
                     {"snapshot_version", session->snapshot()->version}};
        r.set_content(j.dump(), "application/json");
      });
    });
    http.Get(R"(/session/([^/]+)/render)", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const httplib::Request& q, httplib::Response& r) { render(q, r); });
    });
    http.Post(R"(/session/([^/]+)/keyframe)", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const httplib::Request& q, httplib::Response& r) { keyframe(q, r); });
    });
    http.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"ok":true})", "application/json");
    });
    http.set_payload_max_length(std::size_t{256} << 20);
  }
};

Server::Server(ServerOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

Server::~Server() { stop(); }

int Server::start() {
  if (impl_->listener.joinable()) Fail(ErrorCode::kState, "server already started");
  if (impl_->options.port < 0 || impl_->options.port > 65535) {
    Fail(ErrorCode::kInvalidArgument, "port must be in [0, 65535]");
  }
  if (impl_->options.port == 0) {
    impl_->port = impl_->http.bind_to_any_port(impl_->options.host);
  } else {
    impl_->port = impl_->http.bind_to_port(impl_->options.host, impl_->options.port)
                      ? impl_->options.port
                      : -1;
  }
  if (impl_->port < 0) {
    Fail(ErrorCode::kIo, "cannot bind " + impl_->options.host + ":" +
                             std::to_string(impl_->options.port));
  }
  impl_->listener = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
  return impl_->port;
}

void Server::wait() {
  std::unique_lock<std::mutex> lock(impl_->wait_mutex);
  impl_->wait_cv.wait(lock, [&] { return impl_->stopped; });
}

void Server::stop() {
  if (!impl_) return;
  impl_->http.stop();
  if (impl_->listener.joinable()) impl_->listener.join();
  {
    std::lock_guard<std::mutex> lock(impl_->sessions_mutex);
    impl_->sessions.clear();
  }
  {
    std::lock_guard<std::mutex> lock(impl_->wait_mutex);
    impl_->stopped = true;
  }
  impl_->wait_cv.notify_all();
}

int Server::port() const { return impl_->port; }

}  // namespace ffield::service
