#include "ffield/geometry.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <sstream>

#include "ffield/error.hpp"

namespace ffield {

void CameraIntrinsics::validate() const {
  std::ostringstream why;
  if (!(fx > 0) || !(fy > 0)) why << "focal lengths must be positive; ";
  if (width <= 0 || height <= 0) why << "image size must be positive; ";
  if (!(cx > 0 && cx < width)) why << "cx outside (0, width); ";
  if (!(cy > 0 && cy < height)) why << "cy outside (0, height); ";
  if (!why.str().empty()) Fail(ErrorCode::kFormat, "intrinsics: " + why.str());
}

CameraIntrinsics CameraIntrinsics::resized(int new_width, int new_height) const {
  if (new_width <= 0 || new_height <= 0) {
    Fail(ErrorCode::kInvalidArgument, "intrinsics: target resolution must be positive");
  }
  const double sx = static_cast<double>(new_width) / width;
  const double sy = static_cast<double>(new_height) / height;
  CameraIntrinsics out = *this;
  out.fx = fx * sx;
  out.fy = fy * sy;
  out.cx = cx * sx;
  out.cy = cy * sy;
  out.width = new_width;
  out.height = new_height;
  return out;
}

void SceneBounds::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (!(max[i] > min[i]) || !std::isfinite(min[i]) || !std::isfinite(max[i])) {
      Fail(ErrorCode::kFormat, "bounds: max must exceed min on every axis");
    }
  }
}

void ValidatePose(const Pose& pose, const std::string& what) {
  if (!pose.allFinite()) Fail(ErrorCode::kFormat, what + ": pose has non-finite entries");
  const Mat3 r = pose.topLeftCorner<3, 3>();
  const double orth = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = r.determinant();
  const Eigen::RowVector4d bottom = pose.row(3);
  if (orth > 1e-4 || std::abs(det - 1.0) > 1e-4 ||
      (bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9) {
    std::ostringstream os;
    os << what << ": pose is not rigid (determinant " << det
       << ", orthonormality error " << orth << ")";
    Fail(ErrorCode::kFormat, os.str());
  }
}

bool IntersectBox(const Vec3& origin, const Vec3& direction, const Vec3& lo,
                  const Vec3& hi, double* t_near, double* t_far) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (direction[a] == 0.0) {
      if (origin[a] < lo[a] || origin[a] > hi[a]) return false;
      continue;
    }
    const double inv = 1.0 / direction[a];
    double ta = (lo[a] - origin[a]) * inv;
    double tb = (hi[a] - origin[a]) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t1 < t0) return false;
  *t_near = t0;
  *t_far = t1;
  return true;
}

Pose LookAt(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-9) right = forward.unitOrthogonal();
  right.normalize();
  const Vec3 down = forward.cross(right);
  Pose pose = Pose::Identity();
  pose.block<3, 1>(0, 0) = right;
  pose.block<3, 1>(0, 1) = down;
  pose.block<3, 1>(0, 2) = forward;
  pose.block<3, 1>(0, 3) = eye;
  return pose;
}

}  // namespace ffield
