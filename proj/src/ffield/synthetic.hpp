#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ffield/geometry.hpp"
#include "ffield/scene_io.hpp"

namespace ffield {

struct Primitive {
  enum class Kind { kBox, kSphere };
  Kind kind = Kind::kBox;
  std::string label;
  Vec3 albedo = Vec3::Constant(0.5);
  Vec3 center = Vec3::Zero();
  Vec3 half_extent = Vec3::Constant(0.5);  // boxes
  double radius = 0.5;                     // spheres
};

enum class EmbeddingMode { kOrthonormal, kCorrelated };

// A room (inward-facing box, class "wall") holding boxes and spheres,
// observed by cameras on a circular orbit.
struct SceneSpec {
  Vec3 room_min{0.0, 0.0, 0.0};
  Vec3 room_max{4.0, 4.0, 3.0};
  Vec3 wall_albedo{0.75, 0.75, 0.7};
  double bounds_padding = 0.2;
  std::vector<Primitive> primitives;

  int train_views = 20;
  int heldout_views = 4;
  double orbit_radius = 1.6;
  double orbit_height = 2.2;
  Vec3 orbit_center{2.0, 2.0, 0.0};
  Vec3 look_at{2.0, 2.0, 0.6};
  int width = 80;
  int height = 60;
  double fov_x_degrees = 70.0;

  Vec3 light_direction{0.3, 0.5, 1.0};  // towards the light; normalized on use
  double ambient = 0.3;

  int feature_dim = 8;
  double feature_noise = 0.05;
  int feature_downsample = 1;  // feature maps at (W/f) x (H/f)
  EmbeddingMode embedding_mode = EmbeddingMode::kOrthonormal;
  double correlation = 0.7;

  int point_samples = 20000;  // candidates before the visibility filter
  bool write_depth = true;
  std::uint64_t seed = 7;

  // The default 3-class scene: walls, one box and one sphere on the floor.
  static SceneSpec Default();

  // Throws kInvalidArgument for primitives outside the room, overlapping
  // primitives, cameras outside the room or inside a primitive, or a
  // feature dimension too small for the embedding mode.
  void validate() const;

  // "wall" first, then primitive labels in order of first appearance.
  std::vector<std::string> class_labels() const;
  SceneBounds bounds() const;
  CameraIntrinsics intrinsics() const;
  std::vector<Pose> train_poses() const;
  std::vector<Pose> heldout_poses() const;
};

struct RayHit {
  bool hit = false;
  double t = 0.0;  // distance along the unit direction
  Vec3 normal = Vec3::UnitZ();
  std::int32_t class_index = -1;
  Vec3 albedo = Vec3::Zero();
};

// Closed-form first hit against the room shell and all primitives.
RayHit CastRay(const SceneSpec& spec, const Vec3& origin, const Vec3& direction);

// Lambertian shade of a hit under the spec's fixed light.
Vec3 Shade(const SceneSpec& spec, const RayHit& hit);

struct OracleView {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;              // H*W*3
  std::vector<float> depth;            // H*W metric z-depth, 0 on a miss
  std::vector<std::int32_t> classes;   // H*W, kIgnoreLabel on a miss
};

OracleView OracleRender(const SceneSpec& spec, const Pose& pose, const CameraIntrinsics& intrinsics);

// K unit vectors in D dims: mutually orthogonal, or with pairwise cosine
// `correlation` (needs D >= K + 1).
EmbeddingSet MakeEmbeddings(const std::vector<std::string>& labels, int dim, EmbeddingMode mode,
                            double correlation, std::uint64_t seed);

// Area-uniform surface samples kept only if some camera in `poses` sees them.
LabeledPointCloud SampleSurfacePoints(const SceneSpec& spec, const std::vector<Pose>& poses,
                                      const CameraIntrinsics& intrinsics);

struct GeneratedScene {
  std::string directory;
  EmbeddingSet embeddings;
  LabeledPointCloud points;
  std::vector<Pose> train_poses;
  std::vector<Pose> heldout_poses;
};

// Writes the scene layout plus:
//   heldout/NNNNN.*            held-out frames, same per-frame files
//   heldout/labels/NNNNN.png   reference class maps, heldout/labels/labels.txt
//   embeddings.txt, labels.txt, points.txt (x y z class)
GeneratedScene GenerateScene(const SceneSpec& spec, const std::string& directory);

// Frame as the generator writes it, before PNG quantization.
PosedFrame SyntheticFrame(const SceneSpec& spec, const EmbeddingSet& embeddings,
                          std::int64_t frame_id, const Pose& pose, std::uint64_t noise_seed);

}  // namespace ffield
