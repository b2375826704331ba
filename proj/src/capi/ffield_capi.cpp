#include "ffield/ffield.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>

#include "ffield/benchmark.hpp"
#include "ffield/evaluation.hpp"
#include "ffield/renderer.hpp"
#include "ffield/segmentation.hpp"
#include "ffield/synthetic.hpp"
#include "ffield/trainer.hpp"
#include "service/server.hpp"

struct ff_model {
  ffield::Checkpoint checkpoint;
};

struct ff_embeddings {
  ffield::EmbeddingSet set;
};

struct ff_server {
  std::unique_ptr<ffield::service::Server> server;
};

namespace {

thread_local std::string g_last_error;

ff_status Record(ff_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
ff_status Guard(F&& body) {
  try {
    g_last_error.clear();
    body();
    return FF_OK;
  } catch (const ffield::Error& e) {
    return Record(static_cast<ff_status>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return Record(FF_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return Record(FF_INTERNAL, e.what());
  } catch (...) {
    return Record(FF_INTERNAL, "unknown exception");
  }
}

void Require(bool condition, const char* message) {
  if (!condition) ffield::Fail(ffield::ErrorCode::kInvalidArgument, message);
}

char* Duplicate(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

ffield::Pose ToPose(const double* v) {
  Require(v != nullptr, "pose is null");
  ffield::Pose p;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) p(r, c) = v[r * 4 + c];
  }
  ffield::ValidatePose(p, "pose");
  return p;
}

ffield::CameraIntrinsics ResolveIntrinsics(const ff_model* model, const ff_intrinsics* k) {
  if (k) {
    ffield::CameraIntrinsics out{k->fx, k->fy, k->cx, k->cy, k->width, k->height};
    out.validate();
    return out;
  }
  if (!model->checkpoint.intrinsics) {
    ffield::Fail(ffield::ErrorCode::kInvalidArgument,
                 "checkpoint stores no intrinsics; pass them explicitly");
  }
  return *model->checkpoint.intrinsics;
}

ffield::RenderOptions ToRenderOptions(const ff_render_options* o, unsigned maps) {
  ffield::RenderOptions ro;
  ro.maps = maps;
  if (o) {
    ro.samples = o->samples;
    ro.width = o->width;
    ro.height = o->height;
  }
  return ro;
}

ffield::SegmentOptions ToSegmentOptions(const ff_segment_options* o) {
  ffield::SegmentOptions so;
  if (o) {
    so.samples = o->render.samples;
    so.width = o->render.width;
    so.height = o->render.height;
    so.opacity_threshold = o->opacity_threshold;
    so.cosine = o->cosine != 0;
    so.keep_class_scores = o->write_scores != 0;
  }
  return so;
}

void FillEval(const ffield::EvaluationReport& report, ff_eval_result* result, char** table,
              char** json) {
  if (result) {
    result->miou = report.scores.miou;
    result->macc = report.scores.macc;
    result->items = report.items;
    result->classes = report.labels.size();
  }
  if (table) *table = Duplicate(ffield::FormatScoreTable(report.scores, report.labels));
  if (json) *json = Duplicate(ffield::ScoreRecordJson(report.scores, report.labels));
}

}  // namespace

extern "C" {

const char* ff_version(void) { return "1.0.0"; }

const char* ff_status_name(ff_status status) {
  switch (status) {
    case FF_OK: return "ok";
    case FF_INVALID_ARGUMENT: return "invalid argument";
    case FF_IO: return "i/o error";
    case FF_FORMAT: return "format error";
    case FF_SHAPE: return "shape mismatch";
    case FF_NUMERIC: return "numeric error";
    case FF_NOT_FOUND: return "not found";
    case FF_STATE: return "invalid state";
    case FF_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* ff_last_error(void) { return g_last_error.c_str(); }

void ff_string_free(char* s) { std::free(s); }

void ff_synthetic_options_default(ff_synthetic_options* o) {
  if (!o) return;
  const ffield::SceneSpec s = ffield::SceneSpec::Default();
  o->train_views = s.train_views;
  o->heldout_views = s.heldout_views;
  o->width = s.width;
  o->height = s.height;
  o->feature_dim = s.feature_dim;
  o->feature_noise = s.feature_noise;
  o->feature_downsample = s.feature_downsample;
  o->correlated = s.embedding_mode == ffield::EmbeddingMode::kCorrelated;
  o->correlation = s.correlation;
  o->write_depth = s.write_depth;
  o->seed = s.seed;
}

ff_status ff_make_synthetic(const char* directory, const ff_synthetic_options* o) {
  return Guard([&] {
    Require(directory != nullptr, "directory is null");
    ffield::SceneSpec s = ffield::SceneSpec::Default();
    if (o) {
      s.train_views = o->train_views;
      s.heldout_views = o->heldout_views;
      s.width = o->width;
      s.height = o->height;
      s.feature_dim = o->feature_dim;
      s.feature_noise = o->feature_noise;
      s.feature_downsample = o->feature_downsample;
      s.embedding_mode =
          o->correlated ? ffield::EmbeddingMode::kCorrelated : ffield::EmbeddingMode::kOrthonormal;
      s.correlation = o->correlation;
      s.write_depth = o->write_depth != 0;
      s.seed = o->seed;
    }
    ffield::GenerateScene(s, directory);
  });
}

void ff_train_options_default(ff_train_options* o) {
  if (!o) return;
  const ffield::TrainConfig t;
  const ffield::EncodingConfig e;
  o->iterations = t.iterations;
  o->batch_rays = t.batch_rays;
  o->samples = t.samples;
  o->micro_batch_rays = t.micro_batch_rays;
  o->learning_rate = t.learning_rate;
  o->seed = t.seed;
  o->snapshot_interval = t.snapshot_interval;
  o->stratified = t.stratified;
  o->bilinear_features = t.feature_sampling == ffield::FeatureSampling::kBilinear;
  o->lambda_depth = t.weights.lambda_d;
  o->lambda_feature = t.weights.lambda_f;
  o->hash_levels = e.hash_levels;
  o->table_size_log2 = e.table_size_log2;
  o->base_resolution = e.base_resolution;
  o->per_level_scale = e.per_level_scale;
}

ff_status ff_train(const char* scene_dir, const char* checkpoint_path, const char* log_path,
                   const ff_train_options* o, ff_progress_fn progress, void* user,
                   ff_step_stats* last) {
  return Guard([&] {
    Require(scene_dir != nullptr && checkpoint_path != nullptr, "scene or checkpoint path is null");
    ff_train_options opts;
    ff_train_options_default(&opts);
    if (o) opts = *o;
    ffield::TrainConfig tc;
    tc.iterations = opts.iterations;
    tc.batch_rays = opts.batch_rays;
    tc.samples = opts.samples;
    tc.micro_batch_rays = opts.micro_batch_rays;
    tc.learning_rate = opts.learning_rate;
    tc.seed = opts.seed;
    tc.snapshot_interval = opts.snapshot_interval;
    tc.stratified = opts.stratified != 0;
    tc.feature_sampling =
        opts.bilinear_features ? ffield::FeatureSampling::kBilinear : ffield::FeatureSampling::kNearest;
    tc.weights.lambda_d = opts.lambda_depth;
    tc.weights.lambda_f = opts.lambda_feature;
    ffield::EncodingConfig enc;
    enc.hash_levels = opts.hash_levels;
    enc.table_size_log2 = opts.table_size_log2;
    enc.base_resolution = opts.base_resolution;
    enc.per_level_scale = opts.per_level_scale;

    const ffield::Scene scene = ffield::LoadScene(scene_dir);
    ffield::ProgressCallback cb;
    if (progress) {
      cb = [&](const ffield::StepStats& s) {
        const ff_step_stats c{s.iteration, s.losses.rgb, s.losses.depth, s.losses.feature,
                              s.total, s.milliseconds};
        progress(&c, user);
      };
    }
    const ffield::OfflineResult r = ffield::TrainOffline(
        scene, enc, ffield::FieldConfig{}, tc, {checkpoint_path, log_path ? log_path : ""}, cb);

    namespace fs = std::filesystem;
    const fs::path dictionary = fs::path(scene_dir) / "embeddings.txt";
    const fs::path target = fs::absolute(checkpoint_path).parent_path() / "embeddings.txt";
    if (fs::exists(dictionary) && !(fs::exists(target) && fs::equivalent(dictionary, target))) {
      fs::copy_file(dictionary, target, fs::copy_options::overwrite_existing);
    }
    if (last) {
      *last = ff_step_stats{r.last.iteration, r.last.losses.rgb, r.last.losses.depth,
                            r.last.losses.feature, r.last.total, r.last.milliseconds};
    }
  });
}

ff_status ff_model_load(const char* path, ff_model** out) {
  return Guard([&] {
    Require(path != nullptr && out != nullptr, "path or output is null");
    *out = nullptr;
    auto m = std::make_unique<ff_model>(ff_model{ffield::LoadCheckpoint(path)});
    *out = m.release();
  });
}

void ff_model_free(ff_model* model) { delete model; }

ff_status ff_model_info_get(const ff_model* model, ff_model_info* info) {
  return Guard([&] {
    Require(model != nullptr && info != nullptr, "model or info is null");
    const auto& m = model->checkpoint.model;
    info->feature_dim = m.field().feature_dim;
    info->parameter_count = m.parameter_count();
    for (int a = 0; a < 3; ++a) {
      info->bounds_min[a] = m.bounds().min[a];
      info->bounds_max[a] = m.bounds().max[a];
    }
    info->has_intrinsics = model->checkpoint.intrinsics.has_value();
    info->intrinsics = ff_intrinsics{};
    if (const auto& k = model->checkpoint.intrinsics) {
      info->intrinsics = ff_intrinsics{k->fx, k->fy, k->cx, k->cy, k->width, k->height};
    }
  });
}

ff_status ff_embeddings_load(const char* path, ff_embeddings** out) {
  return Guard([&] {
    Require(path != nullptr && out != nullptr, "path or output is null");
    *out = nullptr;
    *out = new ff_embeddings{ffield::LoadEmbeddings(path)};
  });
}

ff_status ff_embeddings_select(const ff_embeddings* dictionary, const char* prompts,
                               ff_embeddings** out) {
  return Guard([&] {
    Require(dictionary != nullptr && prompts != nullptr && out != nullptr,
            "dictionary, prompts or output is null");
    *out = nullptr;
    const ffield::DictionaryEncoder encoder(dictionary->set);
    *out = new ff_embeddings{ffield::EncodeLabels(ffield::SplitPrompts(prompts), encoder)};
  });
}

ff_status ff_embeddings_create(const char* const* labels, const float* values, size_t k, size_t d,
                               ff_embeddings** out) {
  return Guard([&] {
    Require(out != nullptr, "output is null");
    *out = nullptr;
    Require(k > 0 && d > 0, "embeddings need k > 0 and d > 0");
    Require(labels != nullptr && values != nullptr, "labels or values are null");
    ffield::EmbeddingSet set;
    for (size_t i = 0; i < k; ++i) {
      Require(labels[i] != nullptr, "null label");
      for (const std::string& l : set.labels) {
        if (l == labels[i]) {
          ffield::Fail(ffield::ErrorCode::kInvalidArgument,
                       "duplicate label '" + std::string(labels[i]) + "'");
        }
      }
      set.labels.emplace_back(labels[i]);
    }
    set.matrix = ffield::Tensor<float>({k, d}, std::vector<float>(values, values + k * d));
    *out = new ff_embeddings{std::move(set)};
  });
}

void ff_embeddings_free(ff_embeddings* embeddings) { delete embeddings; }

size_t ff_embeddings_count(const ff_embeddings* e) { return e ? e->set.size() : 0; }

size_t ff_embeddings_dim(const ff_embeddings* e) { return e ? e->set.dim() : 0; }

const char* ff_embeddings_label(const ff_embeddings* e, size_t index) {
  if (!e || index >= e->set.labels.size()) return nullptr;
  return e->set.labels[index].c_str();
}

ff_status ff_classify_features(const float* features, size_t m, const ff_embeddings* embeddings,
                               int cosine, int32_t* classes, float* scores) {
  return Guard([&] {
    Require(embeddings != nullptr && classes != nullptr, "embeddings or classes are null");
    Require(features != nullptr || m == 0, "features are null");
    const std::size_t d = embeddings->set.dim();
    const ffield::Classification c = ffield::ClassifyFeatures(
        std::span<const float>(features, m * d), m, embeddings->set, cosine != 0);
    std::copy(c.classes.begin(), c.classes.end(), classes);
    if (scores) std::copy(c.scores.begin(), c.scores.end(), scores);
  });
}

void ff_render_options_default(ff_render_options* o) {
  if (!o) return;
  const ffield::RenderOptions r;
  o->width = r.width;
  o->height = r.height;
  o->samples = r.samples;
}

ff_status ff_render(const ff_model* model, const double pose[16], const ff_intrinsics* intrinsics,
                    const ff_render_options* options, const char* out_stem) {
  return Guard([&] {
    Require(model != nullptr && out_stem != nullptr, "model or output stem is null");
    const ffield::RenderedMaps maps = ffield::RenderMaps(
        model->checkpoint.model, ToPose(pose), ResolveIntrinsics(model, intrinsics),
        ToRenderOptions(options, ffield::kMapColor | ffield::kMapDepth | ffield::kMapOpacity));
    const std::string stem(out_stem);
    ffield::WriteFileBytes(stem + ".color.png", ffield::EncodeColorPng(maps));
    ffield::WriteFileBytes(stem + ".depth.png", ffield::EncodeDepthPng(maps));
    ffield::WriteFileBytes(stem + ".opacity.png", ffield::EncodeOpacityPng(maps));
  });
}

ff_status ff_render_buffers(const ff_model* model, const double pose[16],
                            const ff_intrinsics* intrinsics, const ff_render_options* options,
                            float* rgb, float* depth, float* opacity) {
  return Guard([&] {
    Require(model != nullptr, "model is null");
    unsigned maps = ffield::kMapOpacity;
    if (rgb) maps |= ffield::kMapColor;
    if (depth) maps |= ffield::kMapDepth;
    const ffield::RenderedMaps m =
        ffield::RenderMaps(model->checkpoint.model, ToPose(pose),
                           ResolveIntrinsics(model, intrinsics), ToRenderOptions(options, maps));
    if (rgb) std::copy(m.color.begin(), m.color.end(), rgb);
    if (depth) std::copy(m.depth.begin(), m.depth.end(), depth);
    if (opacity) std::copy(m.opacity.begin(), m.opacity.end(), opacity);
  });
}

void ff_segment_options_default(ff_segment_options* o) {
  if (!o) return;
  const ffield::SegmentOptions s;
  ff_render_options_default(&o->render);
  o->render.samples = s.samples;
  o->opacity_threshold = s.opacity_threshold;
  o->cosine = s.cosine;
  o->write_scores = 0;
}

ff_status ff_segment(const ff_model* model, const double pose[16], const ff_intrinsics* intrinsics,
                     const ff_embeddings* embeddings, const ff_segment_options* options,
                     const char* out_stem) {
  return Guard([&] {
    Require(model != nullptr && embeddings != nullptr && out_stem != nullptr,
            "model, embeddings or output stem is null");
    const ffield::SegmentationMap map =
        ffield::SegmentView(model->checkpoint.model, ToPose(pose),
                            ResolveIntrinsics(model, intrinsics), embeddings->set,
                            ToSegmentOptions(options));
    ffield::WriteSegmentation(out_stem, map);
    if (options && options->write_scores) {
      ffield::WriteFileBytes(std::string(out_stem) + ".scores.bin", ffield::EncodeClassScores(map));
    }
  });
}

ff_status ff_segment_buffer(const ff_model* model, const double pose[16],
                            const ff_intrinsics* intrinsics, const ff_embeddings* embeddings,
                            const ff_segment_options* options, int32_t* classes) {
  return Guard([&] {
    Require(model != nullptr && embeddings != nullptr && classes != nullptr,
            "model, embeddings or classes are null");
    ffield::SegmentOptions so = ToSegmentOptions(options);
    so.keep_class_scores = false;
    const ffield::SegmentationMap map = ffield::SegmentView(
        model->checkpoint.model, ToPose(pose), ResolveIntrinsics(model, intrinsics),
        embeddings->set, so);
    std::copy(map.classes.begin(), map.classes.end(), classes);
  });
}

ff_status ff_segment_points(const ff_model* model, const char* points_path,
                            const ff_embeddings* embeddings, int cosine, const char* out_path,
                            size_t* out_of_bounds) {
  return Guard([&] {
    Require(model != nullptr && points_path != nullptr && embeddings != nullptr &&
                out_path != nullptr,
            "model, paths or embeddings are null");
    const ffield::LabeledPointCloud cloud =
        ffield::LoadPointCloud(points_path, model->checkpoint.model.bounds());
    const ffield::PointSegmentation seg =
        ffield::SegmentPoints(model->checkpoint.model, cloud.points, embeddings->set, cosine != 0);
    ffield::LabeledPointCloud result;
    result.points = cloud.points;
    result.labels = seg.result.classes;
    ffield::WritePointCloud(out_path, result);
    const std::filesystem::path p(out_path);
    ffield::WriteLabelList((p.parent_path() / p.stem()).string() + ".labels.txt",
                           embeddings->set.labels);
    if (out_of_bounds) *out_of_bounds = seg.out_of_bounds.size();
  });
}

ff_status ff_eval_maps(const char* pred_dir, const char* ref_dir, int macro,
                       ff_eval_result* result, char** table, char** json) {
  return Guard([&] {
    Require(pred_dir != nullptr && ref_dir != nullptr, "directory is null");
    FillEval(ffield::EvaluateMapDirectories(
                 pred_dir, ref_dir, macro ? ffield::Aggregation::kMacro : ffield::Aggregation::kPooled),
             result, table, json);
  });
}

ff_status ff_eval_points(const char* pred_path, const char* ref_path, ff_eval_result* result,
                         char** table, char** json) {
  return Guard([&] {
    Require(pred_path != nullptr && ref_path != nullptr, "path is null");
    FillEval(ffield::EvaluatePointFiles(pred_path, ref_path), result, table, json);
  });
}

void ff_benchmark_options_default(ff_benchmark_options* o) {
  if (!o) return;
  const ffield::BenchmarkOptions b;
  o->point_batch = b.point_batch;
  o->width = b.width;
  o->height = b.height;
  o->samples = b.samples;
  o->repeats = b.repeats;
  o->seed = b.seed;
}

ff_status ff_benchmark(const ff_model* model, const ff_benchmark_options* options,
                       ff_benchmark_result* result, char** report, char** json) {
  return Guard([&] {
    Require(model != nullptr, "model is null");
    ffield::BenchmarkOptions b;
    if (options) {
      b.point_batch = options->point_batch;
      b.width = options->width;
      b.height = options->height;
      b.samples = options->samples;
      b.repeats = options->repeats;
      b.seed = options->seed;
    }
    const ffield::BenchmarkReport r = ffield::RunBenchmark(model->checkpoint.model, b);
    if (result) {
      *result = ff_benchmark_result{r.points.per_second, r.points.mean_ms, r.rays.per_second,
                                    r.rays.mean_ms, r.threads};
    }
    if (report) *report = Duplicate(ffield::FormatBenchmark(r));
    if (json) *json = Duplicate(ffield::BenchmarkJson(r));
  });
}

void ff_server_options_default(ff_server_options* o) {
  if (!o) return;
  const ffield::service::ServerOptions s;
  o->host = "127.0.0.1";
  o->port = s.port;
  o->default_width = s.default_width;
  o->default_height = s.default_height;
  o->default_samples = s.default_samples;
}

ff_status ff_server_start(const ff_server_options* options, ff_server** out) {
  return Guard([&] {
    Require(out != nullptr, "output is null");
    *out = nullptr;
    ffield::service::ServerOptions s;
    if (options) {
      if (options->host) s.host = options->host;
      s.port = options->port;
      s.default_width = options->default_width;
      s.default_height = options->default_height;
      s.default_samples = options->default_samples;
    }
    Require(s.default_width > 0 && s.default_height > 0 && s.default_samples > 0,
            "server defaults must be positive");
    auto server = std::make_unique<ff_server>();
    server->server = std::make_unique<ffield::service::Server>(s);
    server->server->start();
    *out = server.release();
  });
}

int ff_server_port(const ff_server* server) { return server ? server->server->port() : -1; }

void ff_server_wait(ff_server* server) {
  if (server) server->server->wait();
}

void ff_server_stop(ff_server* server) {
  if (server) server->server->stop();
}

void ff_server_free(ff_server* server) { delete server; }

}  // extern "C"
