#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "ffield/scene_io.hpp"
#include "ffield/synthetic.hpp"
#include "test_support.hpp"

namespace ffield {
namespace {

namespace fs = std::filesystem;

Bytes FtenBytes(std::uint32_t h, std::uint32_t w, std::uint32_t d, std::size_t values) {
  Bytes b = {'F', 'T', 'E', 'N'};
  for (std::uint32_t v : {h, w, d}) {
    for (int k = 0; k < 4; ++k) b.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  for (std::size_t i = 0; i < values; ++i) {
    float f = 0.25f * static_cast<float>(i);
    std::uint8_t raw[4];
    std::memcpy(raw, &f, 4);
    b.insert(b.end(), raw, raw + 4);
  }
  return b;
}

PosedFrame SmallFrame(std::int64_t id, int d, bool depth = true) {
  PosedFrame f;
  f.frame_id = id;
  f.width = 4;
  f.height = 3;
  f.rgb.assign(36, 0.5f);
  if (depth) f.depth.assign(12, 1.25f);
  if (d > 0) f.features = Tensor<float>({3, 4, std::size_t(d)}, 0.1f);
  f.pose = Pose::Identity();
  f.pose.block<3, 1>(0, 3) = Vec3(0.5 + id, 0.5, 0.5);
  return f;
}

// Writes intrinsics, bounds and frames with the given ids and feature dims.
void WriteSmallScene(const std::string& dir, const std::vector<std::pair<int, int>>& frames,
                     bool depth = true) {
  fs::create_directories(fs::path(dir) / "frames");
  WriteIntrinsics(dir + "/intrinsics.txt", CameraIntrinsics{4, 4, 2, 1.5, 4, 3});
  WriteBounds(dir + "/bounds.txt", SceneBounds{Vec3::Zero(), Vec3(10, 2, 2)});
  for (const auto& [id, d] : frames) WriteFrame(dir + "/frames", SmallFrame(id, d, depth));
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(FeatureMap, DecodesFourByFourByTwo) {
  const Tensor<float> t = DecodeFeatureMap(FtenBytes(4, 4, 2, 32));
  EXPECT_EQ(t.shape(), (Shape{4, 4, 2}));
  // Row-major, channel-last: (y, x, c) -> (y*4 + x)*2 + c.
  EXPECT_EQ(t[(1 * 4 + 2) * 2 + 1], 0.25f * 13);
}

TEST(FeatureMap, TruncatedPayloadNamesCounts) {
  try {
    DecodeFeatureMap(FtenBytes(4, 4, 2, 31));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormat);
    const std::string m = e.what();
    EXPECT_NE(m.find("32"), std::string::npos) << m;
    EXPECT_NE(m.find("31"), std::string::npos) << m;
  }
}

TEST(FeatureMap, BadMagicAndNonFinite) {
  Bytes b = FtenBytes(1, 1, 1, 1);
  b[0] = 'X';
  try {
    DecodeFeatureMap(b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormat);
  }
  Tensor<float> nan({1, 1, 2}, 0.0f);
  nan[1] = std::nanf("");
  try {
    DecodeFeatureMap(EncodeFeatureMap(nan));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumeric);
  }
}

TEST(FeatureMap, RoundTripIsBitIdentical) {
  std::mt19937_64 rng(4);
  std::normal_distribution<float> n;
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 9);
    Tensor<float> t({dim(rng), dim(rng), dim(rng)});
    for (float& v : t.storage()) v = n(rng) * 1e3f;
    const Bytes once = EncodeFeatureMap(t);
    const Tensor<float> back = DecodeFeatureMap(once);
    EXPECT_EQ(back, t);
    EXPECT_EQ(EncodeFeatureMap(back), once);
  }
}

TEST(Embeddings, ParsesTabSeparatedRecords) {
  const EmbeddingSet s = ParseEmbeddings("chair\t1 0 0\n\ntable lamp\t0 0.5 -1\r\n");
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s.dim(), 3u);
  EXPECT_EQ(s.labels[1], "table lamp");
  EXPECT_EQ(s.matrix(1, 2), -1.0f);
  EXPECT_EQ(s.find("chair"), 0u);
  EXPECT_FALSE(s.find("sofa").has_value());
}

TEST(Embeddings, Errors) {
  auto code = [](const std::string& text) {
    try {
      ParseEmbeddings(text);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInternal;
  };
  EXPECT_EQ(code("chair\t\n"), ErrorCode::kFormat);
  EXPECT_EQ(code("chair 1 2\n"), ErrorCode::kFormat);
  EXPECT_EQ(code("a\t1 2\nb\t1 2 3\n"), ErrorCode::kShape);
  EXPECT_EQ(code("a\t1 2\na\t3 4\n"), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code(""), ErrorCode::kFormat);
  EXPECT_EQ(code("a\t1 x\n"), ErrorCode::kFormat);
}

TEST(Embeddings, FileRoundTrip) {
  testing::TempDir dir("emb");
  EmbeddingSet s;
  s.labels = {"wall", "box"};
  s.matrix = Tensor<float>({2, 3}, std::vector<float>{0.1f, 1e-7f, -3.25f, 1.0f / 3.0f, 0, 2});
  WriteEmbeddings(dir / "e.txt", s);
  const EmbeddingSet back = LoadEmbeddings(dir / "e.txt");
  EXPECT_EQ(back.labels, s.labels);
  EXPECT_EQ(back.matrix, s.matrix);
}

TEST(Pose, ParseRequiresSixteenRigidValues) {
  const Pose p = ParsePose("1 0 0 1\n0 1 0 2\n0 0 1 3\n0 0 0 1\n", "p");
  EXPECT_EQ(p(1, 3), 2.0);
  try {
    ParsePose("1 0 0 1 0 1 0 2 0 0 1 3 0 0 0", "p");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormat);
    EXPECT_NE(std::string(e.what()).find("15"), std::string::npos);
  }
  EXPECT_EQ(ParsePose(FormatPose(p), "p"), p);
}

TEST(LoadScene, MissingPoseNamesFrame) {
  testing::TempDir dir("nopose");
  WriteSmallScene(dir.str(), {{1, 0}, {3, 0}, {5, 0}});
  fs::remove(dir.path() / "frames" / "00003.pose.txt");
  try {
    LoadScene(dir.str());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotFound);
    EXPECT_NE(std::string(e.what()).find("frame 3"), std::string::npos) << e.what();
  }
}

TEST(LoadScene, InconsistentFeatureDimNamesBothFrames) {
  testing::TempDir dir("dim");
  WriteSmallScene(dir.str(), {{0, 4}, {1, 4}, {2, 6}});
  try {
    LoadScene(dir.str());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShape);
    const std::string m = e.what();
    EXPECT_NE(m.find("frame 0"), std::string::npos) << m;
    EXPECT_NE(m.find("frame 2"), std::string::npos) << m;
  }
}

TEST(LoadScene, FramesSortedAndPosesPreserved) {
  testing::TempDir dir("sorted");
  WriteSmallScene(dir.str(), {{7, 2}, {2, 2}, {4, 2}});
  const Scene s = LoadScene(dir.str());
  ASSERT_EQ(s.frames.size(), 3u);
  EXPECT_EQ(s.frames[0].frame_id, 2);
  EXPECT_EQ(s.frames[1].frame_id, 4);
  EXPECT_EQ(s.frames[2].frame_id, 7);
  EXPECT_EQ(s.frames[2].pose(0, 3), 7.5);
  EXPECT_EQ(s.feature_dim, 2u);
  EXPECT_TRUE(s.has_depth);
  EXPECT_FLOAT_EQ(s.frames[0].depth[5], 1.25f);
}

TEST(LoadScene, DepthlessSceneLoads) {
  testing::TempDir dir("nodepth");
  WriteSmallScene(dir.str(), {{0, 0}, {1, 0}}, false);
  const Scene s = LoadScene(dir.str());
  EXPECT_FALSE(s.has_depth);
  EXPECT_EQ(s.feature_dim, 0u);
  EXPECT_TRUE(s.warnings.empty());
}

TEST(LoadScene, WarnsOnPartialDepthAndOutsideCameras) {
  testing::TempDir dir("warn");
  WriteSmallScene(dir.str(), {{0, 0}, {1, 0}, {12, 0}});
  fs::remove(dir.path() / "frames" / "00001.depth.png");
  const Scene s = LoadScene(dir.str());
  ASSERT_EQ(s.warnings.size(), 2u);
  EXPECT_NE(s.warnings[0].find("1 frames have no depth"), std::string::npos);
  EXPECT_NE(s.warnings[1].find("frame 12"), std::string::npos);
}

TEST(LoadScene, MissingIntrinsicsOrBounds) {
  testing::TempDir dir("meta");
  WriteSmallScene(dir.str(), {{0, 0}});
  fs::remove(dir.path() / "bounds.txt");
  try {
    LoadScene(dir.str());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotFound);
  }
}

TEST(LoadScene, ReducedResolutionFeaturesAccepted) {
  testing::TempDir dir("half");
  SceneSpec spec = SceneSpec::Default();
  spec.train_views = 3;
  spec.heldout_views = 1;
  spec.feature_downsample = 2;
  GenerateScene(spec, dir.str());
  const Scene s = LoadScene(dir.str());
  EXPECT_EQ(s.frames[0].features.dim(0), std::size_t(spec.height / 2));
  EXPECT_EQ(s.frames[0].features.dim(1), std::size_t(spec.width / 2));
}

TEST(LoadScene, SyntheticSceneLoadsCleanlyAndRoundTrips) {
  testing::TempDir dir("synth");
  const SceneSpec spec = SceneSpec::Default();
  GenerateScene(spec, dir.str());
  const Scene s = LoadScene(dir.str());
  EXPECT_EQ(s.frames.size(), 20u);
  EXPECT_EQ(s.feature_dim, 8u);
  EXPECT_TRUE(s.has_depth);
  EXPECT_TRUE(s.warnings.empty());

  testing::TempDir copy("synth_copy");
  fs::create_directories(copy.path() / "frames");
  WriteIntrinsics(copy / "intrinsics.txt", s.intrinsics);
  WriteBounds(copy / "bounds.txt", s.bounds);
  for (const PosedFrame& f : s.frames) WriteFrame((copy.path() / "frames").string(), f);
  for (const auto& entry : fs::directory_iterator(dir.path() / "frames")) {
    const fs::path other = copy.path() / "frames" / entry.path().filename();
    ASSERT_TRUE(fs::exists(other)) << other;
    EXPECT_EQ(Slurp(entry.path()), Slurp(other)) << entry.path().filename();
  }
  EXPECT_EQ(Slurp(dir.path() / "intrinsics.txt"), Slurp(copy.path() / "intrinsics.txt"));
  EXPECT_EQ(Slurp(dir.path() / "bounds.txt"), Slurp(copy.path() / "bounds.txt"));
}

TEST(PointCloud, RoundTripAndBoundsFlags) {
  testing::TempDir dir("pts");
  LabeledPointCloud c;
  c.points = {Vec3(0.1, 0.2, 0.3), Vec3(5, 0, 0), Vec3(1.0 / 3.0, 0.5, 0.5)};
  c.labels = {0, kIgnoreLabel, 2};
  WritePointCloud(dir / "p.txt", c);
  const LabeledPointCloud back =
      LoadPointCloud(dir / "p.txt", SceneBounds{Vec3::Zero(), Vec3::Ones()});
  ASSERT_EQ(back.points.size(), 3u);
  EXPECT_EQ(back.points[2], c.points[2]);
  EXPECT_EQ(back.labels, c.labels);
  EXPECT_EQ(back.out_of_bounds, std::vector<std::size_t>{1});
}

}  // namespace
}  // namespace ffield
