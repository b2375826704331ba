#pragma once

#include <Eigen/Core>
#include <string>

namespace ffield {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Pose = Eigen::Matrix4d;  // camera-to-world, rigid

// Pinhole camera. Camera frame: x right, y down, looking down +z. The ray
// through pixel (u, v) leaves along ((u+0.5-cx)/fx, (v+0.5-cy)/fy, 1).
struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;
  // Same field of view at a different resolution.
  CameraIntrinsics resized(int new_width, int new_height) const;
  // Unnormalized camera-frame direction of a pixel center (z component 1).
  Vec3 pixel_direction(double u, double v) const {
    return {(u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1.0};
  }
};

// Axis-aligned scene box in meters. Positions are mapped into the unit cube
// with a single uniform scale (the largest extent) so that distances keep
// their ratios; the unit-space box is therefore [0, extent/scale].
struct SceneBounds {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();

  void validate() const;
  double scale() const { return (max - min).maxCoeff(); }
  double diagonal() const { return (max - min).norm(); }
  Vec3 to_unit(const Vec3& world) const { return (world - min) / scale(); }
  Vec3 from_unit(const Vec3& unit) const { return unit * scale() + min; }
  Vec3 unit_extent() const { return (max - min) / scale(); }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

// Throws kFormat naming `what` when the rotation block is not orthonormal
// with determinant +1 (tolerance 1e-4) or the bottom row is not (0,0,0,1).
void ValidatePose(const Pose& pose, const std::string& what);

// Slab test against [lo, hi]. Returns false on a miss; otherwise the entry
// and exit distances (t_near may be negative when the origin is inside).
bool IntersectBox(const Vec3& origin, const Vec3& direction, const Vec3& lo,
                  const Vec3& hi, double* t_near, double* t_far);

// Camera-to-world pose looking from `eye` at `target`, world up `up`.
Pose LookAt(const Vec3& eye, const Vec3& target, const Vec3& up);

}  // namespace ffield
