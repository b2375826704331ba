#include "ffield/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>

#include "ffield/encoding.hpp"

namespace ffield {

std::vector<Ray> GenerateRays(const Pose& pose, const CameraIntrinsics& intrinsics,
                              std::span<const PixelCoord> pixels, const SceneBounds& bounds) {
  ValidatePose(pose, "generate_rays");
  const Mat3 rotation = pose.topLeftCorner<3, 3>();
  const Vec3 origin = bounds.to_unit(pose.block<3, 1>(0, 3));
  const Vec3 lo = Vec3::Zero();
  const Vec3 hi = bounds.unit_extent();
  const double scale = bounds.scale();

  std::vector<Ray> rays(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const PixelCoord& px = pixels[i];
    if (px.u < -0.5 || px.v < -0.5 || px.u > intrinsics.width - 0.5 ||
        px.v > intrinsics.height - 0.5) {
      Fail(ErrorCode::kInvalidArgument, "generate_rays: pixel (" + std::to_string(px.u) + ", " +
                                            std::to_string(px.v) + ") outside the image");
    }
    const Vec3 cam = intrinsics.pixel_direction(px.u, px.v);
    const double cam_norm = cam.norm();
    Ray& ray = rays[i];
    ray.origin = origin;
    ray.direction = (rotation * cam).normalized();
    ray.world_direction = ray.direction;
    ray.depth_scale = scale * cam.z() / cam_norm;
    double t0 = 0, t1 = 0;
    if (IntersectBox(origin, ray.direction, lo, hi, &t0, &t1) && t1 > std::max(t0, 0.0)) {
      ray.t_near = std::max(t0, 0.0);
      ray.t_far = t1;
      ray.hit = true;
    }
  }
  return rays;
}

template <typename T>
RaySamples<T> SampleAlongRays(std::span<const Ray> rays, int samples, bool stratified,
                              std::mt19937_64* rng) {
  if (samples < 2) Fail(ErrorCode::kInvalidArgument, "sample_along_ray: need at least 2 samples");
  if (stratified && !rng) Fail(ErrorCode::kInvalidArgument, "sample_along_ray: stratified needs an rng");
  const std::size_t n = static_cast<std::size_t>(samples);
  RaySamples<T> out;
  out.rays = rays.size();
  out.per_ray = n;
  out.positions = Tensor<T>({rays.size() * n, 3});
  out.t.resize(rays.size() * n);
  out.delta.resize(rays.size() * n);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  std::vector<double> ts(n);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const Ray& ray = rays[r];
    if (!ray.hit) Fail(ErrorCode::kInvalidArgument, "sample_along_ray: ray misses the scene box");
    const double bin = (ray.t_far - ray.t_near) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double offset = stratified ? jitter(*rng) : 0.5;
      ts[i] = ray.t_near + (static_cast<double>(i) + offset) * bin;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = r * n + i;
      const double next = i + 1 < n ? ts[i + 1] : ray.t_far;
      out.t[k] = static_cast<T>(ts[i]);
      // Keeps delta strictly positive even when a jitter lands on a bin edge.
      out.delta[k] = static_cast<T>(std::max(next - ts[i], 1e-12));
      const Vec3 p = ray.origin + ts[i] * ray.direction;
      for (int a = 0; a < 3; ++a) out.positions(k, a) = static_cast<T>(p[a]);
    }
  }
  return out;
}

template <typename T>
CompositeResult<T> Composite(std::span<const T> sigmas, std::span<const T> deltas,
                             std::span<const T> values, std::size_t channels) {
  const std::size_t n = sigmas.size();
  if (deltas.size() != n || values.size() != n * channels) {
    Fail(ErrorCode::kShape, "composite: " + std::to_string(n) + " sigmas, " +
                                std::to_string(deltas.size()) + " deltas, " +
                                std::to_string(values.size()) + " values for " +
                                std::to_string(channels) + " channels");
  }
  CompositeResult<T> out;
  out.value.assign(channels, T(0));
  out.weights.resize(n);
  out.transmittance.resize(n + 1);
  T optical_depth = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sigmas[i] >= T(0))) Fail(ErrorCode::kInvalidArgument, "composite: negative sigma");
    if (!(deltas[i] > T(0))) Fail(ErrorCode::kInvalidArgument, "composite: non-positive delta");
    const T tau = sigmas[i] * deltas[i];
    out.transmittance[i] = std::exp(-optical_depth);
    out.weights[i] = out.transmittance[i] * -std::expm1(-tau);
    optical_depth += tau;
    for (std::size_t c = 0; c < channels; ++c) {
      out.value[c] += out.weights[i] * values[i * channels + c];
    }
    out.opacity += out.weights[i];
  }
  out.transmittance[n] = std::exp(-optical_depth);
  return out;
}

template <typename T>
Var CompositeWeights(Tape<T>& tape, Var sigma, const std::vector<T>& deltas, std::size_t rays,
                     std::size_t samples) {
  const Tensor<T>& sv = tape.value(sigma);
  if (sv.size() != rays * samples || deltas.size() != rays * samples) {
    Fail(ErrorCode::kShape, "composite_weights: sigma " + sv.shape_string() + " and " +
                                std::to_string(deltas.size()) + " deltas for " +
                                std::to_string(rays) + " rays x " + std::to_string(samples));
  }
  Tensor<T> w({rays, samples});
  for (std::size_t r = 0; r < rays; ++r) {
    T optical_depth = T(0);
    for (std::size_t i = 0; i < samples; ++i) {
      const std::size_t k = r * samples + i;
      if (!(sv[k] >= T(0)) || !(deltas[k] > T(0))) {
        Fail(ErrorCode::kInvalidArgument, "composite_weights: negative sigma or delta");
      }
      const T tau = sv[k] * deltas[k];
      w[k] = std::exp(-optical_depth) * -std::expm1(-tau);
      optical_depth += tau;
    }
  }
  // dL/dsigma_k = delta_k * (g_k T_{k+1} - sum_{i>k} g_i w_i)
  return tape.record("composite_weights", std::move(w), {sigma},
                     [sigma, deltas, rays, samples](Tape<T>& t, Var self) {
    Tensor<T>* gs = t.grad_if_needed(sigma);
    if (!gs) return;
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& w = t.value(self);
    const Tensor<T>& sv = t.value(sigma);
#pragma omp parallel for schedule(static) if (rays > 256)
    for (std::size_t r = 0; r < rays; ++r) {
      const std::size_t base = r * samples;
      T suffix = T(0);
      T optical_depth = T(0);
      for (std::size_t i = 0; i < samples; ++i) optical_depth += sv[base + i] * deltas[base + i];
      for (std::size_t i = samples; i-- > 0;) {
        const std::size_t k = base + i;
        // optical_depth currently covers samples [0, i], i.e. T_{i+1}.
        const T t_next = std::exp(-optical_depth);
        (*gs)[k] += deltas[k] * (g[k] * t_next - suffix);
        suffix += g[k] * w[k];
        optical_depth -= sv[k] * deltas[k];
      }
    }
  });
}

template <typename T>
Var WeightedSum(Tape<T>& tape, Var weights, Var values) {
  const Tensor<T>& wv = tape.value(weights);
  const Tensor<T>& vv = tape.value(values);
  const std::size_t rays = wv.rows();
  const std::size_t samples = wv.cols();
  if (wv.rank() != 2 || vv.rows() != rays * samples) {
    Fail(ErrorCode::kShape, "weighted_sum: weights " + wv.shape_string() + " vs values " +
                                vv.shape_string());
  }
  const std::size_t channels = vv.cols();
  Tensor<T> out({rays, channels});
  for (std::size_t r = 0; r < rays; ++r) {
    T* o = out.data() + r * channels;
    for (std::size_t i = 0; i < samples; ++i) {
      const T wi = wv[r * samples + i];
      const T* v = vv.data() + (r * samples + i) * channels;
      for (std::size_t c = 0; c < channels; ++c) o[c] += wi * v[c];
    }
  }
  return tape.record("weighted_sum", std::move(out), {weights, values},
                     [weights, values](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& wv = t.value(weights);
    const Tensor<T>& vv = t.value(values);
    const std::size_t rays = wv.rows();
    const std::size_t samples = wv.cols();
    const std::size_t channels = vv.cols();
    Tensor<T>* gw = t.grad_if_needed(weights);
    Tensor<T>* gv = t.grad_if_needed(values);
    for (std::size_t r = 0; r < rays; ++r) {
      const T* gr = g.data() + r * channels;
      for (std::size_t i = 0; i < samples; ++i) {
        const std::size_t k = r * samples + i;
        const T* v = vv.data() + k * channels;
        if (gw) {
          T acc = T(0);
          for (std::size_t c = 0; c < channels; ++c) acc += gr[c] * v[c];
          (*gw)[k] += acc;
        }
        if (gv) {
          T* gvk = gv->data() + k * channels;
          for (std::size_t c = 0; c < channels; ++c) gvk[c] += wv[k] * gr[c];
        }
      }
    }
  });
}

FieldSamples ModelEvaluator::evaluate(const Tensor<float>& unit_positions,
                                      const Tensor<float>& world_directions,
                                      unsigned heads) const {
  Tape<float> tape(false);
  const FieldVars vars = BindFieldFrozen(tape, model_);
  const Var encoded = EncodePositions(tape, unit_positions, model_.encoding(), model_.layout(),
                                      vars.tables);
  const DensityOutput density = QueryDensity(tape, model_, vars, encoded);
  FieldSamples out;
  const Tensor<float>& sigma = tape.value(density.sigma);
  out.sigma.assign(sigma.values().begin(), sigma.values().end());
  if (heads & kHeadColor) {
    const Var dirs = tape.constant(ShEncodeBatch(world_directions, model_.encoding().sh_degree));
    out.color = tape.value(QueryColor(tape, model_, vars, density.geo, dirs));
  }
  if (heads & kHeadFeature) {
    out.feature = tape.value(QueryFeature(tape, model_, vars, density.geo));
  }
  return out;
}

RenderedMaps RenderMaps(const FieldEvaluator& field, const SceneBounds& bounds, const Pose& pose,
                        const CameraIntrinsics& intrinsics, const RenderOptions& options) {
  const int width = options.width > 0 ? options.width : intrinsics.width;
  const int height = options.height > 0 ? options.height : intrinsics.height;
  const CameraIntrinsics k = (width == intrinsics.width && height == intrinsics.height)
                                 ? intrinsics
                                 : intrinsics.resized(width, height);
  ValidatePose(pose, "render_maps");
  const std::size_t pixels = static_cast<std::size_t>(width) * height;
  const std::size_t dim = field.feature_dim();
  const unsigned maps = options.maps;

  RenderedMaps out;
  out.width = width;
  out.height = height;
  if (maps & kMapColor) out.color.assign(pixels * 3, 0.0f);
  if (maps & kMapDepth) out.depth.assign(pixels, 0.0f);
  if (maps & kMapOpacity) out.opacity.assign(pixels, 0.0f);
  if (maps & kMapFeature) {
    out.feature = Tensor<float>({static_cast<std::size_t>(height), static_cast<std::size_t>(width), dim});
  }
  unsigned heads = 0;
  if (maps & kMapColor) heads |= kHeadColor;
  if (maps & kMapFeature) heads |= kHeadFeature;

  const std::size_t chunk = std::max<std::size_t>(1, options.chunk_rays);
  const std::size_t chunks = (pixels + chunk - 1) / chunk;
  std::exception_ptr failure;
  std::mutex failure_mutex;

#pragma omp parallel for schedule(dynamic)
  for (std::size_t c = 0; c < chunks; ++c) {
    try {
      const std::size_t begin = c * chunk;
      const std::size_t end = std::min(pixels, begin + chunk);
      std::vector<PixelCoord> coords;
      for (std::size_t p = begin; p < end; ++p) {
        coords.push_back({static_cast<double>(p % width), static_cast<double>(p / width)});
      }
      const std::vector<Ray> all = GenerateRays(pose, k, coords, bounds);
      std::vector<Ray> hits;
      std::vector<std::size_t> hit_pixel;
      for (std::size_t i = 0; i < all.size(); ++i) {
        if (all[i].hit) {
          hits.push_back(all[i]);
          hit_pixel.push_back(begin + i);
        }
      }
      if (hits.empty()) continue;
      const RaySamples<float> s = SampleAlongRays<float>(hits, options.samples, false, nullptr);
      const std::size_t n = s.per_ray;
      Tensor<float> dirs({hits.size() * n, 3});
      for (std::size_t r = 0; r < hits.size(); ++r) {
        for (std::size_t i = 0; i < n; ++i) {
          for (int a = 0; a < 3; ++a) {
            dirs(r * n + i, a) = static_cast<float>(hits[r].world_direction[a]);
          }
        }
      }
      const FieldSamples f = field.evaluate(s.positions, dirs, heads);
      for (std::size_t r = 0; r < hits.size(); ++r) {
        const std::size_t base = r * n;
        const CompositeResult<float> comp = Composite<float>(
            std::span<const float>(f.sigma.data() + base, n),
            std::span<const float>(s.delta.data() + base, n), {}, 0);
        const std::size_t p = hit_pixel[r];
        if (maps & kMapOpacity) out.opacity[p] = comp.opacity;
        if (maps & kMapDepth) {
          double z = 0.0;
          for (std::size_t i = 0; i < n; ++i) z += comp.weights[i] * s.t[base + i];
          out.depth[p] = static_cast<float>(z * hits[r].depth_scale);
        }
        if (maps & kMapColor) {
          for (int ch = 0; ch < 3; ++ch) {
            float acc = 0.0f;
            for (std::size_t i = 0; i < n; ++i) acc += comp.weights[i] * f.color(base + i, ch);
            out.color[3 * p + ch] = acc;
          }
        }
        if (maps & kMapFeature) {
          float* dst = out.feature.data() + p * dim;
          for (std::size_t i = 0; i < n; ++i) {
            const float* src = f.feature.data() + (base + i) * dim;
            for (std::size_t d = 0; d < dim; ++d) dst[d] += comp.weights[i] * src[d];
          }
        }
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

RenderedMaps RenderMaps(const FieldModel<float>& model, const Pose& pose,
                        const CameraIntrinsics& intrinsics, const RenderOptions& options) {
  return RenderMaps(ModelEvaluator(model), model.bounds(), pose, intrinsics, options);
}

Bytes EncodeColorPng(const RenderedMaps& maps) {
  if (maps.color.empty()) Fail(ErrorCode::kInvalidArgument, "color map was not rendered");
  std::vector<std::uint8_t> rgb(maps.color.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    rgb[i] = static_cast<std::uint8_t>(std::lround(std::clamp(maps.color[i], 0.0f, 1.0f) * 255.0f));
  }
  return EncodePngRgb8(maps.width, maps.height, rgb);
}

Bytes EncodeDepthPng(const RenderedMaps& maps) {
  if (maps.depth.empty()) Fail(ErrorCode::kInvalidArgument, "depth map was not rendered");
  std::vector<std::uint16_t> mm(maps.depth.size());
  for (std::size_t i = 0; i < mm.size(); ++i) {
    mm[i] = static_cast<std::uint16_t>(std::clamp<long>(std::lround(maps.depth[i] * 1000.0f), 0, 65535));
  }
  return EncodePngGray16(maps.width, maps.height, mm);
}

Bytes EncodeOpacityPng(const RenderedMaps& maps) {
  if (maps.opacity.empty()) Fail(ErrorCode::kInvalidArgument, "opacity map was not rendered");
  std::vector<std::uint8_t> gray(maps.opacity.size());
  for (std::size_t i = 0; i < gray.size(); ++i) {
    gray[i] = static_cast<std::uint8_t>(std::lround(std::clamp(maps.opacity[i], 0.0f, 1.0f) * 255.0f));
  }
  return EncodePngGray8(maps.width, maps.height, gray);
}

#define FFIELD_INSTANTIATE_RENDERER(T)                                                   \
  template RaySamples<T> SampleAlongRays<T>(std::span<const Ray>, int, bool,            \
                                            std::mt19937_64*);                          \
  template CompositeResult<T> Composite<T>(std::span<const T>, std::span<const T>,      \
                                           std::span<const T>, std::size_t);            \
  template Var CompositeWeights<T>(Tape<T>&, Var, const std::vector<T>&, std::size_t,   \
                                   std::size_t);                                        \
  template Var WeightedSum<T>(Tape<T>&, Var, Var);

FFIELD_INSTANTIATE_RENDERER(float)
FFIELD_INSTANTIATE_RENDERER(double)

}  // namespace ffield
