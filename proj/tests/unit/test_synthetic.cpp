#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "ffield/synthetic.hpp"

namespace ffield {
namespace {

SceneSpec SmallSpec() {
  SceneSpec spec = SceneSpec::Default();
  spec.width = 32;
  spec.height = 24;
  return spec;
}

TEST(SceneSpec, DefaultIsValidWithThreeClasses) {
  const SceneSpec spec = SceneSpec::Default();
  EXPECT_NO_THROW(spec.validate());
  EXPECT_EQ(spec.class_labels(), (std::vector<std::string>{"wall", "box", "sphere"}));
  EXPECT_EQ(spec.train_poses().size(), 20u);
  EXPECT_EQ(spec.heldout_poses().size(), 4u);
  const SceneBounds b = spec.bounds();
  for (const Pose& p : spec.train_poses()) {
    EXPECT_NO_THROW(ValidatePose(p, "orbit"));
    EXPECT_TRUE(b.contains(p.block<3, 1>(0, 3)));
  }
}

TEST(SceneSpec, RejectsOverlapAndEscapes) {
  SceneSpec spec = SceneSpec::Default();
  spec.primitives[1].center = spec.primitives[0].center;
  EXPECT_THROW(spec.validate(), Error);
  spec = SceneSpec::Default();
  spec.primitives[0].center.x() = 10;
  EXPECT_THROW(spec.validate(), Error);
  spec = SceneSpec::Default();
  spec.feature_dim = 2;
  EXPECT_THROW(spec.validate(), Error);
}

TEST(CastRay, SphereCenterDepth) {
  const SceneSpec spec = SceneSpec::Default();
  const Primitive& sphere = spec.primitives[1];
  const Vec3 eye = sphere.center + Vec3(-1.0, -0.5, 0.8);
  const Vec3 dir = (sphere.center - eye).normalized();
  const RayHit h = CastRay(spec, eye, dir);
  ASSERT_TRUE(h.hit);
  EXPECT_EQ(h.class_index, 2);
  EXPECT_NEAR(h.t, (sphere.center - eye).norm() - sphere.radius, 1e-12);
  EXPECT_TRUE(h.normal.isApprox(-dir, 1e-12));

  // The same hit through the camera model: pixel (10, 10) is the principal
  // ray when cx = cy = 10.5.
  const CameraIntrinsics k{20, 20, 10.5, 10.5, 21, 21};
  const OracleView view = OracleRender(spec, LookAt(eye, sphere.center, Vec3::UnitZ()), k);
  EXPECT_NEAR(view.depth[10 * 21 + 10], h.t, 1e-5);
  EXPECT_EQ(view.classes[10 * 21 + 10], 2);
}

TEST(CastRay, GrazingRayStaysFinite) {
  const SceneSpec spec = SceneSpec::Default();
  const Primitive& sphere = spec.primitives[1];
  // Tangent to the sphere's top.
  const Vec3 origin = sphere.center + Vec3(-1.0, 0.0, sphere.radius);
  const RayHit h = CastRay(spec, origin, Vec3::UnitX());
  ASSERT_TRUE(h.hit);
  EXPECT_TRUE(std::isfinite(h.t));
  EXPECT_TRUE(h.normal.allFinite());
  EXPECT_TRUE(Shade(spec, h).allFinite());
}

TEST(OracleRender, DepthReprojectsConsistently) {
  const SceneSpec spec = SmallSpec();
  const CameraIntrinsics k = spec.intrinsics();
  const auto poses = spec.train_poses();
  const Pose& a = poses[0];
  const Pose& b = poses[5];
  const OracleView view = OracleRender(spec, a, k);
  const Vec3 eye_b = b.block<3, 1>(0, 3);
  int checked = 0;
  double worst = 0.0;
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const float d = view.depth[v * k.width + u];
      ASSERT_GT(d, 0.0f);  // the closed room is always hit
      const Vec3 cam = k.pixel_direction(u, v) * d;  // z component is the depth
      const Vec3 world = a.topLeftCorner<3, 3>() * cam + a.block<3, 1>(0, 3);
      const double dist = (world - eye_b).norm();
      const RayHit h = CastRay(spec, eye_b, (world - eye_b) / dist);
      if (!h.hit || h.t < dist - 1e-3) continue;  // occluded from b
      worst = std::max(worst, std::abs(h.t - dist));
      ++checked;
    }
  }
  EXPECT_GT(checked, k.width * k.height / 2);
  EXPECT_LT(worst, 1e-4);
}

TEST(OracleRender, ClassMapCoversAllClasses) {
  const SceneSpec spec = SmallSpec();
  std::set<std::int32_t> seen;
  for (const Pose& p : spec.train_poses()) {
    for (std::int32_t c : OracleRender(spec, p, spec.intrinsics()).classes) seen.insert(c);
  }
  EXPECT_EQ(seen, (std::set<std::int32_t>{0, 1, 2}));
}

TEST(OracleRender, EmptyRoomIsAllWall) {
  SceneSpec spec = SmallSpec();
  spec.primitives.clear();
  EXPECT_EQ(spec.class_labels(), std::vector<std::string>{"wall"});
  const OracleView view = OracleRender(spec, spec.train_poses()[3], spec.intrinsics());
  for (std::int32_t c : view.classes) EXPECT_EQ(c, 0);
}

TEST(MakeEmbeddings, OrthonormalAndCorrelated) {
  const std::vector<std::string> labels = {"a", "b", "c", "d"};
  const EmbeddingSet o = MakeEmbeddings(labels, 8, EmbeddingMode::kOrthonormal, 0.0, 3);
  const EmbeddingSet c = MakeEmbeddings(labels, 8, EmbeddingMode::kCorrelated, 0.7, 3);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double dot_o = 0, dot_c = 0;
      for (std::size_t x = 0; x < 8; ++x) {
        dot_o += double(o.matrix(i, x)) * o.matrix(j, x);
        dot_c += double(c.matrix(i, x)) * c.matrix(j, x);
      }
      EXPECT_NEAR(dot_o, i == j ? 1.0 : 0.0, 1e-6);
      EXPECT_NEAR(dot_c, i == j ? 1.0 : 0.7, 1e-6);
    }
  }
  EXPECT_THROW(MakeEmbeddings(labels, 3, EmbeddingMode::kOrthonormal, 0.0, 3), Error);
}

TEST(SyntheticFrame, NoiselessFeaturesAreEmbeddingRows) {
  SceneSpec spec = SmallSpec();
  spec.feature_noise = 0.0;
  const EmbeddingSet e = MakeEmbeddings(spec.class_labels(), 8, spec.embedding_mode, 0.0, 1);
  const Pose pose = spec.train_poses()[2];
  const PosedFrame f = SyntheticFrame(spec, e, 0, pose, 9);
  const OracleView view = OracleRender(spec, pose, spec.intrinsics());
  for (int p = 0; p < spec.width * spec.height; ++p) {
    const std::int32_t c = view.classes[p];
    for (std::size_t j = 0; j < 8; ++j) {
      ASSERT_EQ(f.features[p * 8 + j], e.matrix(c, j)) << "pixel " << p;
    }
  }
}

TEST(SyntheticFrame, SeedDeterminism) {
  const SceneSpec spec = SmallSpec();
  const EmbeddingSet e = MakeEmbeddings(spec.class_labels(), 8, spec.embedding_mode, 0.0, 1);
  const Pose pose = spec.train_poses()[1];
  const PosedFrame a = SyntheticFrame(spec, e, 0, pose, 42);
  const PosedFrame b = SyntheticFrame(spec, e, 0, pose, 42);
  const PosedFrame c = SyntheticFrame(spec, e, 0, pose, 43);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.rgb, b.rgb);
  EXPECT_NE(a.features, c.features);
  EXPECT_EQ(a.rgb, c.rgb);
}

TEST(SampleSurfacePoints, VisibleAndLabeled) {
  SceneSpec spec = SmallSpec();
  spec.point_samples = 3000;
  const LabeledPointCloud cloud = SampleSurfacePoints(spec, spec.train_poses(), spec.intrinsics());
  ASSERT_GT(cloud.points.size(), 1000u);
  ASSERT_EQ(cloud.labels.size(), cloud.points.size());
  const SceneBounds b = spec.bounds();
  std::set<std::int32_t> seen;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    EXPECT_TRUE(b.contains(cloud.points[i]));
    seen.insert(cloud.labels[i]);
  }
  EXPECT_EQ(seen, (std::set<std::int32_t>{0, 1, 2}));
}

}  // namespace
}  // namespace ffield
