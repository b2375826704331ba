#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ffield/ops.hpp"
#include "ffield/renderer.hpp"
#include "test_support.hpp"

namespace ffield {
namespace {

using Span = std::span<const double>;

TEST(Composite, TwoSamplesAtLnTwo) {
  const double ln2 = std::log(2.0);
  const std::vector<double> sigma = {ln2, ln2}, delta = {1, 1}, values = {1, 0};
  const auto r = Composite<double>(Span(sigma), Span(delta), Span(values), 1);
  EXPECT_NEAR(r.transmittance[0], 1.0, 1e-15);
  EXPECT_NEAR(r.transmittance[1], 0.5, 1e-15);
  EXPECT_NEAR(r.weights[0], 0.5, 1e-15);
  EXPECT_NEAR(r.weights[1], 0.25, 1e-15);
  EXPECT_NEAR(r.value[0], 0.5, 1e-15);
  EXPECT_NEAR(r.opacity, 0.75, 1e-15);
}

TEST(Composite, EmptyAndOpaqueLimits) {
  const std::vector<double> zero = {0, 0, 0}, delta = {0.3, 0.3, 0.3}, values = {2, 3, 4};
  const auto empty = Composite<double>(Span(zero), Span(delta), Span(values), 1);
  EXPECT_EQ(empty.value[0], 0.0);
  EXPECT_EQ(empty.opacity, 0.0);
  EXPECT_EQ(empty.transmittance[3], 1.0);

  const std::vector<double> wall = {50, 1, 1}, unit = {1, 1, 1};
  const auto opaque = Composite<double>(Span(wall), Span(unit), Span(values), 1);
  EXPECT_NEAR(opaque.weights[0], 1.0, 1e-20);
  EXPECT_LT(opaque.weights[1] + opaque.weights[2], 1e-21);
  EXPECT_NEAR(opaque.value[0], 2.0, 1e-15);
}

TEST(Composite, NegativeSigmaRejected) {
  const std::vector<double> sigma = {0.5, -0.1}, delta = {1, 1}, values = {0, 0};
  try {
    Composite<double>(Span(sigma), Span(delta), Span(values), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
}

// Weights plus residual transmittance sum to one; transmittance never grows;
// the output is linear in the values.
TEST(Composite, RandomizedIdentities) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> count(1, 300);
  std::exponential_distribution<double> dens(0.7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = count(rng);
    std::vector<double> sigma(n), delta(n), a(n * 2), b(n * 2), mix(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
      sigma[i] = u(rng) < 0.2 ? 0.0 : dens(rng) * 20;
      delta[i] = 1e-3 + u(rng) * 0.05;
    }
    for (std::size_t i = 0; i < 2 * n; ++i) {
      a[i] = u(rng);
      b[i] = u(rng);
      mix[i] = 2.0 * a[i] - 3.0 * b[i];
    }
    const auto ra = Composite<double>(Span(sigma), Span(delta), Span(a), 2);
    const auto rb = Composite<double>(Span(sigma), Span(delta), Span(b), 2);
    const auto rm = Composite<double>(Span(sigma), Span(delta), Span(mix), 2);
    double total = ra.transmittance[n];
    for (double w : ra.weights) {
      EXPECT_GE(w, 0.0);
      total += w;
    }
    ASSERT_NEAR(total, 1.0, 1e-12) << "trial " << trial;
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_LE(ra.transmittance[i + 1], ra.transmittance[i]);
    }
    for (int c = 0; c < 2; ++c) {
      ASSERT_NEAR(rm.value[c], 2.0 * ra.value[c] - 3.0 * rb.value[c], 1e-12);
    }
  }
}

Ray UnitRay(double t_near, double t_far) {
  Ray r;
  r.origin = Vec3(0.5, 0.5, 0.0);
  r.direction = Vec3::UnitZ();
  r.t_near = t_near;
  r.t_far = t_far;
  r.hit = true;
  return r;
}

TEST(SampleAlongRays, TwoMidpointSamples) {
  const std::vector<Ray> rays = {UnitRay(0, 1)};
  const auto s = SampleAlongRays<double>(rays, 2, false, nullptr);
  ASSERT_EQ(s.t.size(), 2u);
  EXPECT_DOUBLE_EQ(s.t[0], 0.25);
  EXPECT_DOUBLE_EQ(s.t[1], 0.75);
  EXPECT_DOUBLE_EQ(s.delta[0], 0.5);
  EXPECT_DOUBLE_EQ(s.delta[1], 0.25);
  EXPECT_DOUBLE_EQ(s.positions(1, 2), 0.75);
}

TEST(SampleAlongRays, StratifiedIsSeededAndOrdered) {
  const std::vector<Ray> rays = {UnitRay(0.1, 0.9), UnitRay(0.0, 0.4)};
  std::mt19937_64 a(5), b(5);
  const auto sa = SampleAlongRays<double>(rays, 64, true, &a);
  const auto sb = SampleAlongRays<double>(rays, 64, true, &b);
  EXPECT_EQ(sa.t, sb.t);
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> count(2, 512);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = count(rng);
    const auto s = SampleAlongRays<double>(rays, n, trial % 2 == 0, &rng);
    for (std::size_t r = 0; r < 2; ++r) {
      for (int i = 0; i < n; ++i) {
        const std::size_t k = r * n + i;
        EXPECT_GE(s.t[k], rays[r].t_near);
        EXPECT_LE(s.t[k], rays[r].t_far);
        EXPECT_GT(s.delta[k], 0.0);
        if (i > 0) EXPECT_GE(s.t[k], s.t[k - 1]);
      }
    }
  }
  EXPECT_THROW(SampleAlongRays<double>(rays, 1, false, nullptr), Error);
  EXPECT_THROW(SampleAlongRays<double>(rays, 8, true, nullptr), Error);
}

TEST(GenerateRays, PrincipalPointFollowsCameraAxis) {
  const SceneBounds bounds{Vec3(-2, -2, -2), Vec3(2, 2, 2)};
  const CameraIntrinsics k{50, 50, 20, 15, 40, 30};
  const Pose pose = LookAt(Vec3(0, 0, 0), Vec3(1, 1, 0.5), Vec3::UnitZ());
  const std::vector<PixelCoord> px = {{19.5, 14.5}, {0, 0}};
  const auto rays = GenerateRays(pose, k, px, bounds);
  EXPECT_TRUE(rays[0].direction.isApprox(pose.block<3, 1>(0, 2), 1e-12));
  EXPECT_DOUBLE_EQ(rays[0].depth_scale, 4.0);
  EXPECT_TRUE(rays[0].hit);
  EXPECT_TRUE(rays[0].origin.isApprox(Vec3(0.5, 0.5, 0.5)));
  EXPECT_LT(rays[1].depth_scale, 4.0);
  const std::vector<PixelCoord> outside = {{40.0, 0}};
  EXPECT_THROW(GenerateRays(pose, k, outside, bounds), Error);
}

TEST(CompositeWeights, MatchesScalarCompositeAndFiniteDifferences) {
  std::mt19937_64 rng(13);
  const std::size_t rays = 3, n = 7;
  Parameter<double> sigma("sigma", testing::RandomTensor({rays * n, 1}, rng, 0.0, 4.0));
  Parameter<double> values("values", testing::RandomTensor({rays * n, 2}, rng));
  std::vector<double> delta(rays * n);
  std::uniform_real_distribution<double> u(0.05, 0.4);
  for (double& d : delta) d = u(rng);

  Tape<double> tape;
  const Tensor<double> w =
      tape.value(CompositeWeights(tape, tape.parameter(sigma), delta, rays, n));
  for (std::size_t r = 0; r < rays; ++r) {
    const auto ref = Composite<double>(Span(sigma.value.data() + r * n, n),
                                       Span(delta.data() + r * n, n),
                                       Span(values.value.data() + r * n * 2, 2 * n), 2);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(w(r, i), ref.weights[i], 1e-15);
  }

  const Tensor<double> proj = testing::RandomTensor({rays, 2}, rng);
  const auto check = testing::CheckGradients(
      {&sigma, &values}, [&](Tape<double>& t, const std::vector<Var>& v) {
        const Var wv = CompositeWeights(t, v[0], delta, rays, n);
        return ops::sum(t, ops::mul(t, WeightedSum(t, wv, v[1]), t.frozen(proj)));
      });
  EXPECT_LT(check.max_rel_error, 1e-6);
}

// Constant feature f0 everywhere, density `sigma` inside a sphere.
class StubField final : public FieldEvaluator {
 public:
  StubField(double sigma, std::vector<float> f0) : sigma_(sigma), f0_(std::move(f0)) {}
  std::size_t feature_dim() const override { return f0_.size(); }
  FieldSamples evaluate(const Tensor<float>& x, const Tensor<float>&, unsigned heads) const override {
    const std::size_t m = x.rows();
    FieldSamples s;
    s.sigma.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      const Vec3 p(x(i, 0), x(i, 1), x(i, 2));
      s.sigma[i] = (p - Vec3::Constant(0.5)).norm() < 0.3 ? static_cast<float>(sigma_) : 0.0f;
    }
    if (heads & kHeadColor) s.color = Tensor<float>({m, 3}, 0.8f);
    if (heads & kHeadFeature) {
      s.feature = Tensor<float>({m, f0_.size()});
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t c = 0; c < f0_.size(); ++c) s.feature(i, c) = f0_[c];
      }
    }
    return s;
  }

 private:
  double sigma_;
  std::vector<float> f0_;
};

struct StubScene {
  SceneBounds bounds{Vec3::Zero(), Vec3::Ones()};
  CameraIntrinsics k{20, 20, 12, 10, 24, 20};
  Pose pose = LookAt(Vec3(0.5, -0.6, 0.5), Vec3(0.5, 0.5, 0.5), Vec3::UnitZ());
};

TEST(RenderMaps, ConstantFeatureScalesWithOpacity) {
  const StubScene s;
  const std::vector<float> f0 = {0.5f, -1.0f, 2.0f};
  RenderOptions opt;
  opt.maps = kMapFeature | kMapOpacity | kMapColor;
  opt.samples = 96;
  const RenderedMaps m = RenderMaps(StubField(30.0, f0), s.bounds, s.pose, s.k, opt);
  float max_opacity = 0.0f;
  std::size_t background = 0;
  for (std::size_t p = 0; p < m.opacity.size(); ++p) {
    max_opacity = std::max(max_opacity, m.opacity[p]);
    if (m.opacity[p] == 0.0f) ++background;
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(m.feature[p * 3 + c], m.opacity[p] * f0[c], 1e-5);
    }
    EXPECT_NEAR(m.color[p * 3], 0.8f * m.opacity[p], 1e-5);
  }
  EXPECT_GT(max_opacity, 0.99f);
  EXPECT_GT(background, 0u);
}

TEST(RenderMaps, EmptyFieldRendersZeros) {
  const StubScene s;
  RenderOptions opt;
  opt.maps = kMapFeature | kMapOpacity | kMapColor | kMapDepth;
  opt.samples = 16;
  const RenderedMaps m = RenderMaps(StubField(0.0, {1.0f, 1.0f}), s.bounds, s.pose, s.k, opt);
  for (float v : m.opacity) EXPECT_EQ(v, 0.0f);
  for (float v : m.depth) EXPECT_EQ(v, 0.0f);
  for (float v : m.color) EXPECT_EQ(v, 0.0f);
  for (float v : m.feature.values()) EXPECT_EQ(v, 0.0f);
}

TEST(RenderMaps, ChunkingDoesNotChangeOutput) {
  const StubScene s;
  const StubField field(12.0, {0.25f, 0.75f});
  RenderOptions opt;
  opt.maps = kMapFeature | kMapOpacity | kMapDepth;
  opt.samples = 32;
  opt.chunk_rays = 4096;
  const RenderedMaps a = RenderMaps(field, s.bounds, s.pose, s.k, opt);
  opt.chunk_rays = 7;
  const RenderedMaps b = RenderMaps(field, s.bounds, s.pose, s.k, opt);
  EXPECT_EQ(a.opacity, b.opacity);
  EXPECT_EQ(a.depth, b.depth);
  EXPECT_EQ(a.feature, b.feature);
}

TEST(RenderMaps, OpaqueSphereDepth) {
  // Camera 1.1 m from the sphere center along +y; the center pixel hits the
  // surface at z-depth 1.1 - 0.3.
  StubScene s;
  s.k = CameraIntrinsics{20, 20, 12.5, 10.5, 24, 20};
  RenderOptions opt;
  opt.maps = kMapDepth | kMapOpacity;
  opt.samples = 2048;
  const RenderedMaps m = RenderMaps(StubField(1e4, {}), s.bounds, s.pose, s.k, opt);
  const std::size_t center = 10 * 24 + 12;
  EXPECT_NEAR(m.opacity[center], 1.0f, 1e-5);
  EXPECT_NEAR(m.depth[center], 0.8f, 2e-3);
}

}  // namespace
}  // namespace ffield
