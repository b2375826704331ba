#include "ffield/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>

#include "ffield/segmentation.hpp"

namespace fs = std::filesystem;

namespace ffield {

namespace {

constexpr double kEps = 1e-9;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Entry distance and entry axis of a ray against a box seen from outside.
bool EnterBox(const Vec3& o, const Vec3& d, const Vec3& lo, const Vec3& hi, double* t, int* axis) {
  double t0 = -kInf, t1 = kInf;
  int entry_axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-300) {
      if (o[a] < lo[a] || o[a] > hi[a]) return false;
      continue;
    }
    double near = (lo[a] - o[a]) / d[a];
    double far = (hi[a] - o[a]) / d[a];
    if (near > far) std::swap(near, far);
    if (near > t0) {
      t0 = near;
      entry_axis = a;
    }
    t1 = std::min(t1, far);
  }
  if (entry_axis < 0 || t0 > t1 || t0 <= kEps) return false;
  *t = t0;
  *axis = entry_axis;
  return true;
}

// Exit distance and axis of a ray leaving a box from inside.
bool ExitBox(const Vec3& o, const Vec3& d, const Vec3& lo, const Vec3& hi, double* t, int* axis) {
  double best = kInf;
  int best_axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-300) continue;
    const double ta = ((d[a] > 0 ? hi[a] : lo[a]) - o[a]) / d[a];
    if (ta < best) {
      best = ta;
      best_axis = a;
    }
  }
  if (best_axis < 0 || best <= kEps) return false;
  *t = best;
  *axis = best_axis;
  return true;
}

bool HitSphere(const Vec3& o, const Vec3& d, const Vec3& c, double r, double* t) {
  const Vec3 oc = o - c;
  const double b = oc.dot(d);
  const double cc = oc.squaredNorm() - r * r;
  const double disc = b * b - cc;
  if (disc < 0.0) return false;
  const double s = std::sqrt(std::max(0.0, disc));
  double root = -b - s;
  if (root <= kEps) root = -b + s;
  if (root <= kEps) return false;
  *t = root;
  return true;
}

Vec3 AxisNormal(int axis, double sign) {
  Vec3 n = Vec3::Zero();
  n[axis] = sign;
  return n;
}

bool InsideRoom(const SceneSpec& spec, const Vec3& lo, const Vec3& hi) {
  return (lo.array() >= spec.room_min.array() - 1e-12).all() &&
         (hi.array() <= spec.room_max.array() + 1e-12).all();
}

double BoxPointDistance(const Primitive& box, const Vec3& p) {
  const Vec3 q = (p - box.center).cwiseAbs() - box.half_extent;
  return q.cwiseMax(0.0).norm();
}

bool Overlap(const Primitive& a, const Primitive& b) {
  using K = Primitive::Kind;
  if (a.kind == K::kBox && b.kind == K::kBox) {
    return ((a.center - b.center).cwiseAbs().array() <
            (a.half_extent + b.half_extent).array()).all();
  }
  if (a.kind == K::kSphere && b.kind == K::kSphere) {
    return (a.center - b.center).norm() < a.radius + b.radius;
  }
  const Primitive& box = a.kind == K::kBox ? a : b;
  const Primitive& sphere = a.kind == K::kBox ? b : a;
  return BoxPointDistance(box, sphere.center) < sphere.radius;
}

bool ContainsPoint(const Primitive& p, const Vec3& x) {
  if (p.kind == Primitive::Kind::kBox) {
    return ((x - p.center).cwiseAbs().array() <= p.half_extent.array()).all();
  }
  return (x - p.center).norm() <= p.radius;
}

std::vector<Pose> OrbitPoses(const SceneSpec& spec, int count, double phase) {
  std::vector<Pose> poses;
  for (int i = 0; i < count; ++i) {
    const double angle = 2.0 * std::numbers::pi * (i + phase) / count;
    const Vec3 eye = spec.orbit_center + Vec3(spec.orbit_radius * std::cos(angle),
                                              spec.orbit_radius * std::sin(angle),
                                              spec.orbit_height);
    poses.push_back(LookAt(eye, spec.look_at, Vec3::UnitZ()));
  }
  return poses;
}

}  // namespace

SceneSpec SceneSpec::Default() {
  SceneSpec spec;
  Primitive box;
  box.kind = Primitive::Kind::kBox;
  box.label = "box";
  box.albedo = {0.85, 0.3, 0.2};
  box.center = {1.3, 2.5, 0.35};
  box.half_extent = {0.35, 0.35, 0.35};
  Primitive sphere;
  sphere.kind = Primitive::Kind::kSphere;
  sphere.label = "sphere";
  sphere.albedo = {0.2, 0.4, 0.85};
  sphere.center = {2.7, 1.6, 0.45};
  sphere.radius = 0.45;
  spec.primitives = {box, sphere};
  return spec;
}

void SceneSpec::validate() const {
  const auto bad = [](const std::string& why) { Fail(ErrorCode::kInvalidArgument, "scene spec: " + why); };
  if (!((room_max - room_min).array() > 0.0).all()) bad("room has no volume");
  if (bounds_padding < 0.0) bad("negative bounds padding");
  if (train_views < 1 || heldout_views < 0) bad("view counts");
  if (width < 2 || height < 2) bad("image size");
  if (!(fov_x_degrees > 1.0 && fov_x_degrees < 170.0)) bad("field of view");
  if (feature_dim < 1) bad("feature_dim < 1");
  if (feature_downsample < 1 || width / feature_downsample < 1 || height / feature_downsample < 1) {
    bad("feature_downsample");
  }
  if (feature_noise < 0.0) bad("negative feature noise");
  if (ambient < 0.0 || ambient > 1.0) bad("ambient outside [0, 1]");
  for (std::size_t i = 0; i < primitives.size(); ++i) {
    const Primitive& p = primitives[i];
    const std::string name = "primitive " + std::to_string(i) + " ('" + p.label + "')";
    if (p.label.empty() || p.label == "wall") bad(name + ": label must be non-empty and not 'wall'");
    if (p.kind == Primitive::Kind::kBox) {
      if (!(p.half_extent.array() > 0.0).all()) bad(name + ": degenerate box");
      if (!InsideRoom(*this, p.center - p.half_extent, p.center + p.half_extent)) {
        bad(name + ": outside the room");
      }
    } else {
      if (!(p.radius > 0.0)) bad(name + ": degenerate sphere");
      if (!InsideRoom(*this, p.center - Vec3::Constant(p.radius), p.center + Vec3::Constant(p.radius))) {
        bad(name + ": outside the room");
      }
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (Overlap(p, primitives[j])) {
        bad(name + " overlaps primitive " + std::to_string(j) + " ('" + primitives[j].label + "')");
      }
    }
  }
  const std::size_t k = class_labels().size();
  if (embedding_mode == EmbeddingMode::kOrthonormal && static_cast<std::size_t>(feature_dim) < k) {
    bad("orthonormal embeddings need feature_dim >= " + std::to_string(k));
  }
  if (embedding_mode == EmbeddingMode::kCorrelated) {
    if (static_cast<std::size_t>(feature_dim) < k + 1) {
      bad("correlated embeddings need feature_dim >= " + std::to_string(k + 1));
    }
    if (!(correlation >= 0.0 && correlation < 1.0)) bad("correlation outside [0, 1)");
  }
  std::vector<Pose> poses = train_poses();
  const std::vector<Pose> held = heldout_poses();
  poses.insert(poses.end(), held.begin(), held.end());
  for (const Pose& pose : poses) {
    const Vec3 eye = pose.block<3, 1>(0, 3);
    if (!InsideRoom(*this, eye, eye) || (eye - room_min).minCoeff() <= 0.0 ||
        (room_max - eye).minCoeff() <= 0.0) {
      bad("camera outside the room");
    }
    for (const Primitive& p : primitives) {
      if (ContainsPoint(p, eye)) bad("camera inside '" + p.label + "'");
    }
  }
}

std::vector<std::string> SceneSpec::class_labels() const {
  std::vector<std::string> labels{"wall"};
  for (const Primitive& p : primitives) {
    if (std::find(labels.begin(), labels.end(), p.label) == labels.end()) labels.push_back(p.label);
  }
  return labels;
}

SceneBounds SceneSpec::bounds() const {
  return {room_min - Vec3::Constant(bounds_padding), room_max + Vec3::Constant(bounds_padding)};
}

CameraIntrinsics SceneSpec::intrinsics() const {
  const double f = 0.5 * width / std::tan(0.5 * fov_x_degrees * std::numbers::pi / 180.0);
  return {f, f, 0.5 * width, 0.5 * height, width, height};
}

std::vector<Pose> SceneSpec::train_poses() const { return OrbitPoses(*this, train_views, 0.0); }

std::vector<Pose> SceneSpec::heldout_poses() const {
  return heldout_views > 0 ? OrbitPoses(*this, heldout_views, 0.5 * heldout_views / train_views)
                           : std::vector<Pose>{};
}

RayHit CastRay(const SceneSpec& spec, const Vec3& origin, const Vec3& direction) {
  const std::vector<std::string> labels = spec.class_labels();
  RayHit best;
  double t = 0.0;
  int axis = 0;
  if (ExitBox(origin, direction, spec.room_min, spec.room_max, &t, &axis)) {
    best.hit = true;
    best.t = t;
    best.normal = AxisNormal(axis, direction[axis] > 0 ? -1.0 : 1.0);
    best.class_index = 0;
    best.albedo = spec.wall_albedo;
  }
  for (const Primitive& p : spec.primitives) {
    RayHit h;
    if (p.kind == Primitive::Kind::kBox) {
      if (!EnterBox(origin, direction, p.center - p.half_extent, p.center + p.half_extent, &t, &axis)) {
        continue;
      }
      h.normal = AxisNormal(axis, direction[axis] > 0 ? -1.0 : 1.0);
    } else {
      if (!HitSphere(origin, direction, p.center, p.radius, &t)) continue;
      h.normal = (origin + t * direction - p.center) / p.radius;
    }
    if (best.hit && t >= best.t) continue;
    h.hit = true;
    h.t = t;
    h.albedo = p.albedo;
    h.class_index = static_cast<std::int32_t>(
        std::find(labels.begin(), labels.end(), p.label) - labels.begin());
    best = h;
  }
  return best;
}

Vec3 Shade(const SceneSpec& spec, const RayHit& hit) {
  const Vec3 l = spec.light_direction.normalized();
  const double lambert = std::max(0.0, hit.normal.dot(l));
  return hit.albedo * (spec.ambient + (1.0 - spec.ambient) * lambert);
}

OracleView OracleRender(const SceneSpec& spec, const Pose& pose, const CameraIntrinsics& intrinsics) {
  ValidatePose(pose, "oracle_render");
  OracleView view;
  view.width = intrinsics.width;
  view.height = intrinsics.height;
  const std::size_t pixels = static_cast<std::size_t>(view.width) * view.height;
  view.rgb.assign(pixels * 3, 0.0f);
  view.depth.assign(pixels, 0.0f);
  view.classes.assign(pixels, kIgnoreLabel);
  const Mat3 rotation = pose.topLeftCorner<3, 3>();
  const Vec3 eye = pose.block<3, 1>(0, 3);
#pragma omp parallel for schedule(static)
  for (int v = 0; v < view.height; ++v) {
    for (int u = 0; u < view.width; ++u) {
      const Vec3 cam = intrinsics.pixel_direction(u, v);
      const Vec3 dir = (rotation * cam).normalized();
      const RayHit h = CastRay(spec, eye, dir);
      if (!h.hit) continue;
      const std::size_t p = static_cast<std::size_t>(v) * view.width + u;
      const Vec3 c = Shade(spec, h);
      for (int k = 0; k < 3; ++k) view.rgb[3 * p + k] = static_cast<float>(c[k]);
      view.depth[p] = static_cast<float>(h.t * cam.z() / cam.norm());
      view.classes[p] = h.class_index;
    }
  }
  return view;
}

EmbeddingSet MakeEmbeddings(const std::vector<std::string>& labels, int dim, EmbeddingMode mode,
                            double correlation, std::uint64_t seed) {
  const std::size_t k = labels.size();
  const std::size_t d = static_cast<std::size_t>(dim);
  const std::size_t basis_count = mode == EmbeddingMode::kCorrelated ? k + 1 : k;
  if (k == 0) Fail(ErrorCode::kInvalidArgument, "embeddings: no labels");
  if (d < basis_count) {
    Fail(ErrorCode::kInvalidArgument, "embeddings: dimension " + std::to_string(d) +
                                          " too small for " + std::to_string(k) + " labels");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> basis;
  while (basis.size() < basis_count) {
    Eigen::VectorXd v(d);
    for (std::size_t j = 0; j < d; ++j) v[j] = normal(rng);
    for (const auto& b : basis) v -= v.dot(b) * b;
    for (const auto& b : basis) v -= v.dot(b) * b;  // second pass for accuracy
    const double n = v.norm();
    if (n < 1e-6) continue;
    basis.push_back(v / n);
  }
  EmbeddingSet set;
  set.labels = labels;
  set.matrix = Tensor<float>({k, d});
  for (std::size_t i = 0; i < k; ++i) {
    Eigen::VectorXd e = basis[i];
    if (mode == EmbeddingMode::kCorrelated) {
      e = std::sqrt(1.0 - correlation) * basis[i] + std::sqrt(correlation) * basis[k];
    }
    for (std::size_t j = 0; j < d; ++j) set.matrix(i, j) = static_cast<float>(e[j]);
  }
  return set;
}

LabeledPointCloud SampleSurfacePoints(const SceneSpec& spec, const std::vector<Pose>& poses,
                                      const CameraIntrinsics& intrinsics) {
  struct Face {
    Vec3 origin, du, dv;  // point = origin + a du + b dv, a, b in [0,1]
    double area;
    std::int32_t label;
    int primitive;  // -1 for planar faces
  };
  const std::vector<std::string> labels = spec.class_labels();
  std::vector<Face> faces;
  const auto add_box = [&](const Vec3& lo, const Vec3& hi, std::int32_t label) {
    const Vec3 ext = hi - lo;
    for (int a = 0; a < 3; ++a) {
      const int b = (a + 1) % 3, c = (a + 2) % 3;
      Vec3 du = Vec3::Zero(), dv = Vec3::Zero();
      du[b] = ext[b];
      dv[c] = ext[c];
      for (int side = 0; side < 2; ++side) {
        Vec3 o = lo;
        if (side) o[a] = hi[a];
        faces.push_back({o, du, dv, ext[b] * ext[c], label, -1});
      }
    }
  };
  add_box(spec.room_min, spec.room_max, 0);
  for (std::size_t i = 0; i < spec.primitives.size(); ++i) {
    const Primitive& p = spec.primitives[i];
    const auto label = static_cast<std::int32_t>(
        std::find(labels.begin(), labels.end(), p.label) - labels.begin());
    if (p.kind == Primitive::Kind::kBox) {
      add_box(p.center - p.half_extent, p.center + p.half_extent, label);
    } else {
      faces.push_back({p.center, Vec3::Zero(), Vec3::Zero(),
                       4.0 * std::numbers::pi * p.radius * p.radius, label, static_cast<int>(i)});
    }
  }
  std::vector<double> cumulative;
  double total = 0.0;
  for (const Face& f : faces) cumulative.push_back(total += f.area);

  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  LabeledPointCloud cloud;
  for (int n = 0; n < spec.point_samples; ++n) {
    const double pick = unit(rng) * total;
    const std::size_t fi = std::min<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin(),
        faces.size() - 1);
    const Face& f = faces[fi];
    Vec3 p;
    if (f.primitive >= 0) {
      Vec3 dir(normal(rng), normal(rng), normal(rng));
      dir.normalize();
      p = f.origin + spec.primitives[f.primitive].radius * dir;
    } else {
      const double a = unit(rng), b = unit(rng);
      p = f.origin + a * f.du + b * f.dv;
    }
    bool visible = false;
    for (const Pose& pose : poses) {
      const Vec3 eye = pose.block<3, 1>(0, 3);
      const Vec3 cam = pose.topLeftCorner<3, 3>().transpose() * (p - eye);
      if (cam.z() <= 1e-6) continue;
      const double u = intrinsics.fx * cam.x() / cam.z() + intrinsics.cx - 0.5;
      const double v = intrinsics.fy * cam.y() / cam.z() + intrinsics.cy - 0.5;
      if (u < -0.5 || v < -0.5 || u > intrinsics.width - 0.5 || v > intrinsics.height - 0.5) continue;
      const double dist = (p - eye).norm();
      const RayHit h = CastRay(spec, eye, (p - eye) / dist);
      if (h.hit && std::abs(h.t - dist) < 1e-6 * std::max(1.0, dist)) {
        visible = true;
        break;
      }
    }
    if (!visible) continue;
    cloud.points.push_back(p);
    cloud.labels.push_back(f.label);
  }
  return cloud;
}

PosedFrame SyntheticFrame(const SceneSpec& spec, const EmbeddingSet& embeddings,
                          std::int64_t frame_id, const Pose& pose, std::uint64_t noise_seed) {
  const CameraIntrinsics k = spec.intrinsics();
  const OracleView view = OracleRender(spec, pose, k);
  PosedFrame frame;
  frame.frame_id = frame_id;
  frame.width = view.width;
  frame.height = view.height;
  frame.rgb = view.rgb;
  if (spec.write_depth) frame.depth = view.depth;
  frame.pose = pose;

  const std::size_t d = embeddings.dim();
  const int wf = spec.width / spec.feature_downsample;
  const int hf = spec.height / spec.feature_downsample;
  frame.features = Tensor<float>({static_cast<std::size_t>(hf), static_cast<std::size_t>(wf), d});
  const Mat3 rotation = pose.topLeftCorner<3, 3>();
  const Vec3 eye = pose.block<3, 1>(0, 3);
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int y = 0; y < hf; ++y) {
    for (int x = 0; x < wf; ++x) {
      const double u = (x + 0.5) * spec.width / wf - 0.5;
      const double v = (y + 0.5) * spec.height / hf - 0.5;
      const RayHit h = CastRay(spec, eye, (rotation * k.pixel_direction(u, v)).normalized());
      float* out = frame.features.data() + (static_cast<std::size_t>(y) * wf + x) * d;
      for (std::size_t j = 0; j < d; ++j) {
        const double base = h.hit ? embeddings.matrix(h.class_index, j) : 0.0;
        const double n = spec.feature_noise > 0.0 ? spec.feature_noise * noise(rng) : 0.0;
        out[j] = static_cast<float>(base + n);
      }
    }
  }
  return frame;
}

GeneratedScene GenerateScene(const SceneSpec& spec, const std::string& directory) {
  spec.validate();
  const fs::path root(directory);
  fs::create_directories(root / "frames");
  fs::create_directories(root / "heldout" / "labels");

  GeneratedScene out;
  out.directory = directory;
  const std::vector<std::string> labels = spec.class_labels();
  out.embeddings = MakeEmbeddings(labels, spec.feature_dim, spec.embedding_mode, spec.correlation,
                                  spec.seed);
  out.train_poses = spec.train_poses();
  out.heldout_poses = spec.heldout_poses();
  const CameraIntrinsics k = spec.intrinsics();

  WriteIntrinsics((root / "intrinsics.txt").string(), k);
  WriteBounds((root / "bounds.txt").string(), spec.bounds());
  WriteEmbeddings((root / "embeddings.txt").string(), out.embeddings);
  WriteLabelList((root / "labels.txt").string(), labels);
  WriteLabelList((root / "heldout" / "labels" / "labels.txt").string(), labels);

  for (std::size_t i = 0; i < out.train_poses.size(); ++i) {
    WriteFrame((root / "frames").string(),
               SyntheticFrame(spec, out.embeddings, static_cast<std::int64_t>(i), out.train_poses[i],
                              spec.seed * 1000003ull + i));
  }
  std::vector<PaletteEntry> palette;
  for (const std::string& l : labels) palette.push_back(LabelColor(l));
  for (std::size_t i = 0; i < out.heldout_poses.size(); ++i) {
    const auto id = static_cast<std::int64_t>(i);
    WriteFrame((root / "heldout").string(),
               SyntheticFrame(spec, out.embeddings, id, out.heldout_poses[i],
                              spec.seed * 1000003ull + 500000ull + i));
    const OracleView view = OracleRender(spec, out.heldout_poses[i], k);
    std::vector<std::uint8_t> indices(view.classes.size());
    bool any_miss = false;
    for (std::size_t p = 0; p < indices.size(); ++p) {
      any_miss = any_miss || view.classes[p] == kIgnoreLabel;
      indices[p] = view.classes[p] == kIgnoreLabel ? 255 : static_cast<std::uint8_t>(view.classes[p]);
    }
    std::vector<PaletteEntry> pal = palette;
    if (any_miss) pal.resize(256, PaletteEntry{0, 0, 0});
    WriteFileBytes((root / "heldout" / "labels" / (FrameStem(id) + ".png")).string(),
                   EncodePngIndexed(view.width, view.height, indices, pal));
  }
  out.points = SampleSurfacePoints(spec, out.train_poses, k);
  WritePointCloud((root / "points.txt").string(), out.points);
  return out;
}

}  // namespace ffield
