// Exercises the shared library strictly through its C interface.
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ffield/ffield.h"

namespace {

namespace fs = std::filesystem;

std::vector<double> ReadPose(const fs::path& file) {
  std::ifstream in(file);
  std::vector<double> v(16);
  for (double& x : v) in >> x;
  return v;
}

class CApi : public testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("ffield_capi_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_ / "model");

    ff_synthetic_options syn;
    ff_synthetic_options_default(&syn);
    syn.train_views = 6;
    syn.heldout_views = 2;
    syn.width = 32;
    syn.height = 24;
    ASSERT_EQ(ff_make_synthetic(scene().c_str(), &syn), FF_OK) << ff_last_error();

    ff_train_options train;
    ff_train_options_default(&train);
    train.iterations = 6;
    train.batch_rays = 64;
    train.micro_batch_rays = 32;
    train.samples = 16;
    train.hash_levels = 4;
    train.table_size_log2 = 10;
    train.learning_rate = 1e-2;
    ff_step_stats last{};
    const ff_status s = ff_train(scene().c_str(), checkpoint().c_str(),
                                 (root_ / "model" / "log.tsv").c_str(), &train, &CountSteps,
                                 nullptr, &last);
    ASSERT_EQ(s, FF_OK) << ff_last_error();
    last_iteration_ = last.iteration;
    ASSERT_EQ(ff_model_load(checkpoint().c_str(), &model_), FF_OK) << ff_last_error();
  }

  static void TearDownTestSuite() {
    ff_model_free(model_);
    model_ = nullptr;
    fs::remove_all(root_);
  }

  static void CountSteps(const ff_step_stats* s, void*) {
    ++steps_seen_;
    if (s->iteration <= max_iteration_seen_) ++out_of_order_;
    max_iteration_seen_ = s->iteration;
  }

  static fs::path scene() { return root_ / "scene"; }
  static fs::path checkpoint() { return root_ / "model" / "model.ffld"; }
  static std::vector<double> HeldoutPose(int i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%05d.pose.txt", i);
    return ReadPose(scene() / "heldout" / name);
  }

  static fs::path root_;
  static ff_model* model_;
  static int steps_seen_;
  static int out_of_order_;
  static std::int64_t max_iteration_seen_;
  static std::int64_t last_iteration_;
};

fs::path CApi::root_;
ff_model* CApi::model_ = nullptr;
int CApi::steps_seen_ = 0;
int CApi::out_of_order_ = 0;
std::int64_t CApi::max_iteration_seen_ = 0;
std::int64_t CApi::last_iteration_ = 0;

TEST(CApiBasics, VersionAndStatusNames) {
  EXPECT_STRNE(ff_version(), "");
  EXPECT_STREQ(ff_status_name(FF_OK), "ok");
  EXPECT_STREQ(ff_status_name(FF_SHAPE), "shape mismatch");
  EXPECT_STREQ(ff_status_name(static_cast<ff_status>(99)), "unknown status");
}

TEST(CApiBasics, NullArgumentsAreRejected) {
  ff_model* m = nullptr;
  EXPECT_EQ(ff_model_load(nullptr, &m), FF_INVALID_ARGUMENT);
  EXPECT_STRNE(ff_last_error(), "");
  EXPECT_EQ(ff_model_info_get(nullptr, nullptr), FF_INVALID_ARGUMENT);
  EXPECT_EQ(ff_train(nullptr, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr),
            FF_INVALID_ARGUMENT);
  EXPECT_EQ(ff_benchmark(nullptr, nullptr, nullptr, nullptr, nullptr), FF_INVALID_ARGUMENT);
  EXPECT_EQ(ff_classify_features(nullptr, 1, nullptr, 0, nullptr, nullptr), FF_INVALID_ARGUMENT);
  EXPECT_EQ(ff_embeddings_count(nullptr), 0u);
  EXPECT_EQ(ff_embeddings_label(nullptr, 0), nullptr);
  EXPECT_EQ(ff_server_port(nullptr), -1);
  // Freeing null handles is a no-op.
  ff_model_free(nullptr);
  ff_embeddings_free(nullptr);
  ff_server_free(nullptr);
  ff_string_free(nullptr);
}

TEST(CApiBasics, ErrorCodesAndMessages) {
  ff_model* m = nullptr;
  EXPECT_EQ(ff_model_load("/nonexistent/dir/model.ffld", &m), FF_IO);
  EXPECT_EQ(m, nullptr);
  EXPECT_NE(std::string(ff_last_error()).find("/nonexistent/dir/model.ffld"), std::string::npos);

  const fs::path bad = fs::temp_directory_path() / "ffield_capi_bad.ffld";
  std::ofstream(bad) << "not a checkpoint";
  EXPECT_EQ(ff_model_load(bad.c_str(), &m), FF_FORMAT);
  fs::remove(bad);

  const char* labels[] = {"a", "b"};
  const float values[] = {1, 0, 0, 1};
  ff_embeddings* e = nullptr;
  ASSERT_EQ(ff_embeddings_create(labels, values, 2, 2, &e), FF_OK);
  EXPECT_STREQ(ff_last_error(), "");  // cleared by the successful call
  ff_embeddings* picked = nullptr;
  EXPECT_EQ(ff_embeddings_select(e, "c", &picked), FF_NOT_FOUND);
  EXPECT_EQ(picked, nullptr);
  ff_embeddings_free(e);
}

TEST(CApiBasics, ClassifyFeatures) {
  const char* labels[] = {"x", "y", "z"};
  const float values[] = {1, 0, 0, 1, -1, -1};
  ff_embeddings* e = nullptr;
  ASSERT_EQ(ff_embeddings_create(labels, values, 3, 2, &e), FF_OK);
  EXPECT_EQ(ff_embeddings_count(e), 3u);
  EXPECT_EQ(ff_embeddings_dim(e), 2u);
  EXPECT_STREQ(ff_embeddings_label(e, 2), "z");
  EXPECT_EQ(ff_embeddings_label(e, 3), nullptr);
  const float f[] = {3, 1, 0, 2, -1, -4, 0, 0};
  std::int32_t classes[4];
  float scores[4];
  ASSERT_EQ(ff_classify_features(f, 4, e, 0, classes, scores), FF_OK);
  EXPECT_EQ(classes[0], 0);
  EXPECT_EQ(classes[1], 1);
  EXPECT_EQ(classes[2], 2);
  EXPECT_EQ(classes[3], 0);  // tie
  EXPECT_FLOAT_EQ(scores[2], 5.0f);
  ASSERT_EQ(ff_classify_features(f, 4, e, 1, classes, nullptr), FF_OK);
  EXPECT_EQ(classes[0], 0);
  ff_embeddings_free(e);
}

TEST(CApiBasics, ServerStartsOnAFreePort) {
  ff_server_options o;
  ff_server_options_default(&o);
  EXPECT_EQ(o.default_samples, 64);
  o.port = 0;
  ff_server* s = nullptr;
  ASSERT_EQ(ff_server_start(&o, &s), FF_OK) << ff_last_error();
  EXPECT_GT(ff_server_port(s), 0);
  ff_server_stop(s);
  ff_server_wait(s);  // returns at once after stop
  ff_server_free(s);
  o.default_samples = 0;
  EXPECT_EQ(ff_server_start(&o, &s), FF_INVALID_ARGUMENT);
}

TEST_F(CApi, TrainingWroteCheckpointLogAndDictionary) {
  EXPECT_EQ(last_iteration_, 6);
  EXPECT_EQ(steps_seen_, 6);
  EXPECT_EQ(out_of_order_, 0);
  EXPECT_TRUE(fs::exists(root_ / "model" / "log.tsv"));
  EXPECT_TRUE(fs::exists(root_ / "model" / "embeddings.txt"));

  ff_model_info info;
  ASSERT_EQ(ff_model_info_get(model_, &info), FF_OK);
  EXPECT_EQ(info.feature_dim, 8);
  EXPECT_GT(info.parameter_count, 0u);
  ASSERT_TRUE(info.has_intrinsics);
  EXPECT_EQ(info.intrinsics.width, 32);
  EXPECT_EQ(info.intrinsics.height, 24);
  for (int a = 0; a < 3; ++a) EXPECT_LT(info.bounds_min[a], info.bounds_max[a]);
}

TEST_F(CApi, RenderBuffersAndFiles) {
  const std::vector<double> pose = HeldoutPose(0);
  ff_render_options ro;
  ff_render_options_default(&ro);
  ro.samples = 16;
  ro.width = 16;
  ro.height = 12;
  std::vector<float> rgb(16 * 12 * 3), depth(16 * 12), opacity(16 * 12);
  ASSERT_EQ(ff_render_buffers(model_, pose.data(), nullptr, &ro, rgb.data(), depth.data(),
                              opacity.data()),
            FF_OK)
      << ff_last_error();
  for (float v : rgb) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
  for (float v : opacity) EXPECT_TRUE(v >= 0.0f && v <= 1.0f + 1e-6f);
  for (float v : depth) EXPECT_TRUE(std::isfinite(v) && v >= 0.0f);

  const fs::path stem = root_ / "render" / "view0";
  fs::create_directories(stem.parent_path());
  ASSERT_EQ(ff_render(model_, pose.data(), nullptr, &ro, stem.c_str()), FF_OK) << ff_last_error();
  for (const char* ext : {".color.png", ".depth.png", ".opacity.png"}) {
    EXPECT_TRUE(fs::exists(stem.string() + ext)) << ext;
  }

  std::vector<double> skewed = pose;
  skewed[0] *= 2.0;
  EXPECT_EQ(ff_render_buffers(model_, skewed.data(), nullptr, &ro, rgb.data(), nullptr, nullptr),
            FF_FORMAT);
  const ff_intrinsics bad{0, 10, 5, 5, 10, 10};
  EXPECT_EQ(ff_render_buffers(model_, pose.data(), &bad, &ro, rgb.data(), nullptr, nullptr),
            FF_FORMAT);
}

TEST_F(CApi, SegmentViewsAndEvaluate) {
  ff_embeddings* dict = nullptr;
  ASSERT_EQ(ff_embeddings_load((root_ / "model" / "embeddings.txt").c_str(), &dict), FF_OK);
  EXPECT_EQ(ff_embeddings_count(dict), 3u);
  ff_embeddings* prompts = nullptr;
  ASSERT_EQ(ff_embeddings_select(dict, "sphere, wall", &prompts), FF_OK);
  EXPECT_STREQ(ff_embeddings_label(prompts, 0), "sphere");
  EXPECT_STREQ(ff_embeddings_label(prompts, 1), "wall");

  ff_segment_options so;
  ff_segment_options_default(&so);
  EXPECT_DOUBLE_EQ(so.opacity_threshold, 0.5);
  so.render.samples = 16;
  const fs::path pred = root_ / "pred";
  fs::create_directories(pred);
  for (int i = 0; i < 2; ++i) {
    const std::vector<double> pose = HeldoutPose(i);
    std::vector<std::int32_t> classes(32 * 24, -7);
    ASSERT_EQ(ff_segment_buffer(model_, pose.data(), nullptr, dict, &so, classes.data()), FF_OK)
        << ff_last_error();
    for (std::int32_t c : classes) EXPECT_TRUE(c >= 0 && c <= 3);
    char name[16];
    std::snprintf(name, sizeof(name), "%05d", i);
    ASSERT_EQ(ff_segment(model_, pose.data(), nullptr, dict, &so, (pred / name).c_str()), FF_OK);
    EXPECT_TRUE(fs::exists(pred / (std::string(name) + ".labels.txt")));
  }

  ff_eval_result self{};
  ASSERT_EQ(ff_eval_maps(pred.c_str(), pred.c_str(), 0, &self, nullptr, nullptr), FF_OK)
      << ff_last_error();
  EXPECT_EQ(self.items, 2u);
  EXPECT_DOUBLE_EQ(self.miou, 1.0);

  ff_eval_result r{};
  char* table = nullptr;
  char* json = nullptr;
  ASSERT_EQ(ff_eval_maps(pred.c_str(), (scene() / "heldout" / "labels").c_str(), 1, &r, &table,
                         &json),
            FF_OK)
      << ff_last_error();
  EXPECT_EQ(r.items, 2u);
  EXPECT_GE(r.miou, 0.0);
  EXPECT_LE(r.miou, 1.0);
  EXPECT_NE(std::string(table).find("mIoU"), std::string::npos);
  EXPECT_NE(std::string(json).find("\"miou\""), std::string::npos);
  ff_string_free(table);
  ff_string_free(json);
  EXPECT_EQ(ff_eval_maps(pred.c_str(), (root_ / "missing").c_str(), 0, &r, nullptr, nullptr),
            FF_IO);
  ff_embeddings_free(prompts);
  ff_embeddings_free(dict);
}

TEST_F(CApi, SegmentPointsAndEvaluate) {
  ff_embeddings* dict = nullptr;
  ASSERT_EQ(ff_embeddings_load((scene() / "embeddings.txt").c_str(), &dict), FF_OK);
  const fs::path out = root_ / "points.pred.txt";
  size_t outside = 99;
  ASSERT_EQ(ff_segment_points(model_, (scene() / "points.txt").c_str(), dict, 0, out.c_str(),
                              &outside),
            FF_OK)
      << ff_last_error();
  EXPECT_EQ(outside, 0u);
  ff_eval_result r{};
  ASSERT_EQ(ff_eval_points(out.c_str(), (scene() / "points.txt").c_str(), &r, nullptr, nullptr),
            FF_OK)
      << ff_last_error();
  EXPECT_GT(r.items, 0u);
  EXPECT_GE(r.miou, 0.0);
  EXPECT_LE(r.miou, 1.0);

  const char* labels[] = {"a"};
  const float values[] = {1, 2, 3};
  ff_embeddings* wrong = nullptr;
  ASSERT_EQ(ff_embeddings_create(labels, values, 1, 3, &wrong), FF_OK);
  EXPECT_EQ(ff_segment_points(model_, (scene() / "points.txt").c_str(), wrong, 0, out.c_str(),
                              nullptr),
            FF_SHAPE);
  ff_embeddings_free(wrong);
  ff_embeddings_free(dict);
}

TEST_F(CApi, Benchmark) {
  ff_benchmark_options o;
  ff_benchmark_options_default(&o);
  o.point_batch = 256;
  o.width = 8;
  o.height = 6;
  o.samples = 8;
  o.repeats = 2;
  ff_benchmark_result r{};
  char* report = nullptr;
  char* json = nullptr;
  ASSERT_EQ(ff_benchmark(model_, &o, &r, &report, &json), FF_OK) << ff_last_error();
  EXPECT_GT(r.points_per_second, 0.0);
  EXPECT_GT(r.pixels_per_second, 0.0);
  EXPECT_GT(r.point_batch_ms, 0.0);
  EXPECT_GE(r.threads, 1);
  EXPECT_NE(std::string(json).find("\"threads\""), std::string::npos);
  EXPECT_FALSE(std::string(report).empty());
  ff_string_free(report);
  ff_string_free(json);
  o.point_batch = 0;
  EXPECT_EQ(ff_benchmark(model_, &o, &r, nullptr, nullptr), FF_INVALID_ARGUMENT);
}

}  // namespace
