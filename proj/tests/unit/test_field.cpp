#include <gtest/gtest.h>

#include <random>

#include "ffield/field.hpp"
#include "ffield/renderer.hpp"
#include "ffield/segmentation.hpp"
#include "test_support.hpp"

namespace ffield {
namespace {

EncodingConfig SmallEncoding() {
  EncodingConfig e;
  e.hash_levels = 2;
  e.base_resolution = 4;
  e.per_level_scale = 2.0;
  e.table_size_log2 = 8;
  return e;
}

const SceneBounds kBounds{Vec3(-1, -1, 0), Vec3(1, 1, 2)};

Tensor<float> RandomUnit(std::size_t n, std::mt19937_64& rng) {
  Tensor<float> t({n, 3});
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : t.storage()) v = u(rng);
  return t;
}

Tensor<float> RandomDirections(std::size_t n, std::mt19937_64& rng) {
  Tensor<float> t({n, 3});
  std::normal_distribution<double> g;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = Vec3(g(rng), g(rng), g(rng)).normalized();
    for (int a = 0; a < 3; ++a) t(i, a) = static_cast<float>(d[a]);
  }
  return t;
}

// Perturbs every parameter so outputs depend on all layers.
void Scramble(FieldModel<float>& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-0.5f, 0.5f);
  for (Parameter<float>* p : m.parameters()) {
    for (float& v : p->value.storage()) v += u(rng);
  }
}

TEST(FieldModel, ParameterCountRegression) {
  // Tables: level 0 is dense 5^3 = 125 rows, level 1 is capped at 2^8 rows,
  // 2 features each. MLPs: density 16->64->16, color 31->64->64->3,
  // feature 15->64->64->8.
  const std::size_t tables = (125 + 256) * 2;
  const std::size_t density = 16 * 64 + 64 + 64 * 16 + 16;
  const std::size_t color = 31 * 64 + 64 + 64 * 64 + 64 + 64 * 3 + 3;
  const std::size_t feature = 15 * 64 + 64 + 64 * 64 + 64 + 64 * 8 + 8;
  EXPECT_EQ(tables + density + color + feature, 14997u);
  FieldConfig f;
  EXPECT_EQ(FieldParameterCount(SmallEncoding(), f), 14997u);
  const FieldModel<float> m(SmallEncoding(), f, kBounds, 1);
  EXPECT_EQ(m.parameter_count(), 14997u);
}

TEST(FieldModel, FeatureHeadWidthFollowsDimension) {
  std::mt19937_64 rng(3);
  const Tensor<float> x = RandomUnit(5, rng);
  for (const int d : {2, 8, 512}) {
    FieldConfig f;
    f.feature_dim = d;
    const FieldModel<float> m(SmallEncoding(), f, kBounds, 2);
    const FieldSamples s = ModelEvaluator(m).evaluate(x, Tensor<float>(), kHeadFeature);
    EXPECT_EQ(s.feature.shape(), (Shape{5, std::size_t(d)}));
  }
}

TEST(FieldModel, OutputRanges) {
  std::mt19937_64 rng(8);
  FieldModel<float> m(SmallEncoding(), FieldConfig{}, kBounds, 4);
  Scramble(m, 5);
  const Tensor<float> x = RandomUnit(400, rng);
  const FieldSamples s =
      ModelEvaluator(m).evaluate(x, RandomDirections(400, rng), kHeadColor | kHeadFeature);
  for (float v : s.sigma) EXPECT_GE(v, 0.0f);
  for (float v : s.color.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  // Zero-initialized biases still give strictly positive density.
  const FieldModel<float> fresh(SmallEncoding(), FieldConfig{}, kBounds, 4);
  for (float v : ModelEvaluator(fresh).evaluate(x, Tensor<float>(), 0).sigma) EXPECT_GT(v, 0.0f);
}

TEST(FieldModel, DirectionOnlyChangesColor) {
  std::mt19937_64 rng(9);
  FieldModel<float> m(SmallEncoding(), FieldConfig{}, kBounds, 6);
  Scramble(m, 7);
  const Tensor<float> x = RandomUnit(50, rng);
  const ModelEvaluator eval(m);
  const FieldSamples a = eval.evaluate(x, RandomDirections(50, rng), kHeadColor | kHeadFeature);
  const FieldSamples b = eval.evaluate(x, RandomDirections(50, rng), kHeadColor | kHeadFeature);
  EXPECT_EQ(a.sigma, b.sigma);
  EXPECT_EQ(a.feature, b.feature);
  EXPECT_NE(a.color, b.color);
}

TEST(FieldModel, PointFeaturesMatchEvaluator) {
  FieldModel<float> m(SmallEncoding(), FieldConfig{}, kBounds, 10);
  Scramble(m, 11);
  const std::vector<Vec3> pts = {Vec3(0, 0, 1), Vec3(-0.5, 0.9, 0.1)};
  const Tensor<float> f = QueryPointFeatures(m, pts);
  Tensor<float> unit({2, 3});
  for (int i = 0; i < 2; ++i) {
    const Vec3 u = kBounds.to_unit(pts[i]);
    for (int a = 0; a < 3; ++a) unit(i, a) = static_cast<float>(u[a]);
  }
  EXPECT_EQ(f, ModelEvaluator(m).evaluate(unit, Tensor<float>(), kHeadFeature).feature);
}

TEST(FieldModel, SameSeedSameInitialization) {
  const FieldModel<float> a(SmallEncoding(), FieldConfig{}, kBounds, 12);
  const FieldModel<float> b(SmallEncoding(), FieldConfig{}, kBounds, 12);
  const FieldModel<float> c(SmallEncoding(), FieldConfig{}, kBounds, 13);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->value, pb[i]->value);
    differs |= pa[i]->value != pc[i]->value;
  }
  EXPECT_TRUE(differs);
}

TEST(Checkpoint, RoundTripPreservesEverything) {
  testing::TempDir dir("ckpt");
  FieldConfig f;
  f.feature_dim = 5;
  FieldModel<float> m(SmallEncoding(), f, kBounds, 14);
  Scramble(m, 15);
  const CameraIntrinsics k{50, 55, 20, 15, 40, 30};
  SaveCheckpoint(dir / "m.ffld", m, k);
  const Checkpoint back = LoadCheckpoint(dir / "m.ffld");
  EXPECT_EQ(back.model.field().feature_dim, 5);
  EXPECT_EQ(back.model.encoding().table_size_log2, 8);
  EXPECT_DOUBLE_EQ(back.model.encoding().per_level_scale, 2.0);
  EXPECT_EQ(back.model.bounds().min, kBounds.min);
  ASSERT_TRUE(back.intrinsics.has_value());
  EXPECT_EQ(back.intrinsics->fy, 55);
  EXPECT_EQ(back.intrinsics->height, 30);
  const auto pa = m.parameters();
  const auto pb = back.model.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
  }
  EXPECT_EQ(EncodeCheckpoint(back.model, back.intrinsics), EncodeCheckpoint(m, k));
  EXPECT_FALSE(DecodeCheckpoint(EncodeCheckpoint(m, std::nullopt)).intrinsics.has_value());
}

TEST(Checkpoint, CorruptInputRejected) {
  const FieldModel<float> m(SmallEncoding(), FieldConfig{}, kBounds, 1);
  Bytes b = EncodeCheckpoint(m, std::nullopt);
  Bytes bad = b;
  bad[0] = 'Z';
  EXPECT_THROW(DecodeCheckpoint(bad), Error);
  b.resize(b.size() - 3);
  EXPECT_THROW(DecodeCheckpoint(b), Error);
}

TEST(FieldModel, DoubleCastAgreesWithFloat) {
  FieldModel<float> m(SmallEncoding(), FieldConfig{}, kBounds, 16);
  Scramble(m, 17);
  const FieldModel<double> d = m.cast<double>();
  const FieldModel<float> back = d.cast<float>();
  const auto pa = m.parameters();
  const auto pb = back.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
}

}  // namespace
}  // namespace ffield
