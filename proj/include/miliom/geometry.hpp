/// @file geometry.hpp
/// Unit quaternions, SO(3) exp/log/slerp, and rigid transforms.
#pragma once

#include <Eigen/Dense>

namespace miliom {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Taylor-series cutoff for angle-dependent trig ratios.
inline constexpr double kSmallAngle = 1e-8;

Mat3 skew(const Vec3& v);

/// Hamilton-convention unit quaternion. Normalized to 1e-12 and kept on the
/// w >= 0 hemisphere by every constructor and operation.
struct UnitQuaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  UnitQuaternion() = default;
  UnitQuaternion(double w_, double x_, double y_, double z_);

  static UnitQuaternion identity() { return {}; }
  static UnitQuaternion from_matrix(const Mat3& R);

  UnitQuaternion operator*(const UnitQuaternion& rhs) const;
  UnitQuaternion inverse() const;
  Vec3 rotate(const Vec3& v) const;
  Mat3 matrix() const;
  Vec3 vec() const { return {x, y, z}; }
  double dot(const UnitQuaternion& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
  /// Geodesic distance to another rotation, in [0, pi].
  double angle_to(const UnitQuaternion& o) const;
};

/// Rotation-vector exponential map onto the unit quaternion group.
UnitQuaternion exp_rotvec(const Vec3& v);
/// Inverse of exp_rotvec; returns the rotation vector with angle in [0, pi].
Vec3 log_quat(const UnitQuaternion& q);
/// Shortest-arc spherical interpolation, s in [0, 1] between a and b.
UnitQuaternion slerp(const UnitQuaternion& a, const UnitQuaternion& b, double s);

/// Right Jacobian of SO(3): Exp(v + d) ~ Exp(v) Exp(Jr(v) d).
Mat3 so3_right_jacobian(const Vec3& v);
/// Inverse right Jacobian; requires |v| < pi.
Mat3 so3_right_jacobian_inv(const Vec3& v);

struct RigidTransform {
  UnitQuaternion q;
  Vec3 t = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  RigidTransform operator*(const RigidTransform& rhs) const;
  RigidTransform inverse() const;
  Vec3 operator()(const Vec3& p) const { return q.rotate(p) + t; }
};

}  // namespace miliom
