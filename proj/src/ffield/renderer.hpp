#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ffield/field.hpp"
#include "ffield/tape.hpp"

namespace ffield {

// A ray in unit-cube (normalized scene) coordinates. `hit` is false when
// the ray misses the scene box; such rays are never sampled.
struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 0.0;
  bool hit = false;
  // Metric z-depth (camera axis, meters) per unit of t.
  double depth_scale = 1.0;
  // World-frame unit direction (fed to the color head).
  Vec3 world_direction = Vec3::UnitZ();
};

struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
};

// Rays through pixel centers of `pixels`. Throws kFormat for a non-rigid pose
// and kInvalidArgument for pixels outside the image.
std::vector<Ray> GenerateRays(const Pose& pose, const CameraIntrinsics& intrinsics,
                              std::span<const PixelCoord> pixels, const SceneBounds& bounds);

// Samples along rays: N equal bins over [t_near, t_far]; the midpoint of each
// bin, or a uniform jitter inside it when stratified. delta_i = t_{i+1} - t_i
// and the last delta is t_far - t_N.
template <typename T>
struct RaySamples {
  std::size_t rays = 0;
  std::size_t per_ray = 0;
  Tensor<T> positions;  // (rays*N) x 3, unit cube
  std::vector<T> t;     // rays*N
  std::vector<T> delta; // rays*N
};

template <typename T>
RaySamples<T> SampleAlongRays(std::span<const Ray> rays, int samples, bool stratified,
                              std::mt19937_64* rng);

template <typename T>
struct CompositeResult {
  std::vector<T> value;         // channels
  std::vector<T> weights;       // N
  std::vector<T> transmittance; // N + 1; the last entry is T_{N+1}
  T opacity = T(0);             // sum of weights = 1 - T_{N+1}
};

// T_i = exp(-sum_{j<i} sigma_j delta_j), w_i = T_i (1 - exp(-sigma_i delta_i)),
// out = sum_i w_i values_i. values is N x channels, row-major.
template <typename T>
CompositeResult<T> Composite(std::span<const T> sigmas, std::span<const T> deltas,
                             std::span<const T> values, std::size_t channels);

// Differentiable compositing weights: sigma is (rays*N) x 1, the result is
// rays x N. Gradients flow to sigma only (deltas are constants).
template <typename T>
Var CompositeWeights(Tape<T>& tape, Var sigma, const std::vector<T>& deltas,
                     std::size_t rays, std::size_t samples);

// sum_i w[r, i] * values[r*N + i, :] -> rays x C.
template <typename T>
Var WeightedSum(Tape<T>& tape, Var weights, Var values);

// Per-sample field outputs used by the map renderer.
struct FieldSamples {
  std::vector<float> sigma;  // M
  Tensor<float> color;       // M x 3 (when requested)
  Tensor<float> feature;     // M x D (when requested)
};

enum RenderHead : unsigned {
  kHeadColor = 1u,
  kHeadFeature = 2u,
};

// What the renderer queries per sample; implemented by the trained field and
// by analytic stubs in tests.
class FieldEvaluator {
 public:
  virtual ~FieldEvaluator() = default;
  virtual std::size_t feature_dim() const = 0;
  // unit_positions and world_directions are M x 3.
  virtual FieldSamples evaluate(const Tensor<float>& unit_positions,
                                const Tensor<float>& world_directions,
                                unsigned heads) const = 0;
};

class ModelEvaluator final : public FieldEvaluator {
 public:
  explicit ModelEvaluator(const FieldModel<float>& model) : model_(model) {}
  std::size_t feature_dim() const override {
    return static_cast<std::size_t>(model_.field().feature_dim);
  }
  FieldSamples evaluate(const Tensor<float>& unit_positions,
                        const Tensor<float>& world_directions, unsigned heads) const override;

 private:
  const FieldModel<float>& model_;
};

enum MapKind : unsigned {
  kMapColor = 1u,
  kMapDepth = 2u,
  kMapFeature = 4u,
  kMapOpacity = 8u,
};

struct RenderOptions {
  unsigned maps = kMapColor | kMapDepth | kMapOpacity;
  int samples = 256;
  int width = 0;   // 0: intrinsics resolution
  int height = 0;
  std::size_t chunk_rays = 2048;
};

// Row-major maps at width x height. Depth is the expected metric z-depth
// sum_i w_i z_i (not divided by opacity); rays missing the box render zeros.
struct RenderedMaps {
  int width = 0;
  int height = 0;
  std::vector<float> color;    // H*W*3
  std::vector<float> depth;    // H*W meters
  std::vector<float> opacity;  // H*W
  Tensor<float> feature;       // H x W x D
};

RenderedMaps RenderMaps(const FieldEvaluator& field, const SceneBounds& bounds,
                        const Pose& pose, const CameraIntrinsics& intrinsics,
                        const RenderOptions& options);

RenderedMaps RenderMaps(const FieldModel<float>& model, const Pose& pose,
                        const CameraIntrinsics& intrinsics, const RenderOptions& options);

// Map exports.
Bytes EncodeColorPng(const RenderedMaps& maps);
Bytes EncodeDepthPng(const RenderedMaps& maps);    // 16-bit millimeters
Bytes EncodeOpacityPng(const RenderedMaps& maps);  // 8-bit

}  // namespace ffield
