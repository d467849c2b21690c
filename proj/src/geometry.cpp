#include "miliom/geometry.hpp"

#include <cmath>

namespace miliom {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

namespace {

// Renormalizes and flips onto the w >= 0 hemisphere.
void canonicalize(double& w, double& x, double& y, double& z) {
  double n = std::sqrt(w * w + x * x + y * y + z * z);
  double s = (w < 0.0) ? -1.0 / n : 1.0 / n;
  w *= s;
  x *= s;
  y *= s;
  z *= s;
}

}  // namespace

UnitQuaternion::UnitQuaternion(double w_, double x_, double y_, double z_)
    : w(w_), x(x_), y(y_), z(z_) {
  canonicalize(w, x, y, z);
}

UnitQuaternion UnitQuaternion::from_matrix(const Mat3& R) {
  Eigen::Quaterniond q(R);
  return {q.w(), q.x(), q.y(), q.z()};
}

UnitQuaternion UnitQuaternion::operator*(const UnitQuaternion& r) const {
  return {w * r.w - x * r.x - y * r.y - z * r.z, w * r.x + x * r.w + y * r.z - z * r.y,
          w * r.y - x * r.z + y * r.w + z * r.x, w * r.z + x * r.y - y * r.x + z * r.w};
}

UnitQuaternion UnitQuaternion::inverse() const { return {w, -x, -y, -z}; }

Vec3 UnitQuaternion::rotate(const Vec3& v) const {
  // v + 2 w (u x v) + 2 u x (u x v), u = vector part
  Vec3 u(x, y, z);
  Vec3 uv = u.cross(v);
  return v + 2.0 * (w * uv + u.cross(uv));
}

Mat3 UnitQuaternion::matrix() const {
  Mat3 R;
  double xx = x * x, yy = y * y, zz = z * z;
  double xy = x * y, xz = x * z, yz = y * z;
  double wx = w * x, wy = w * y, wz = w * z;
  R << 1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),  //
      2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),   //
      2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy);
  return R;
}

double UnitQuaternion::angle_to(const UnitQuaternion& o) const {
  return log_quat(inverse() * o).norm();
}

UnitQuaternion exp_rotvec(const Vec3& v) {
  double theta = v.norm();
  double half_sinc;  // sin(theta/2)/theta
  double c;
  if (theta < kSmallAngle) {
    half_sinc = 0.5 - theta * theta / 48.0;
    c = 1.0 - theta * theta / 8.0;
  } else {
    half_sinc = std::sin(0.5 * theta) / theta;
    c = std::cos(0.5 * theta);
  }
  return {c, half_sinc * v.x(), half_sinc * v.y(), half_sinc * v.z()};
}

Vec3 log_quat(const UnitQuaternion& q) {
  Vec3 u = q.vec();
  double s = u.norm();
  double k;  // angle / s
  if (s < kSmallAngle) {
    k = 2.0 / q.w * (1.0 - s * s / (3.0 * q.w * q.w));
  } else {
    k = 2.0 * std::atan2(s, q.w) / s;
  }
  return k * u;
}

UnitQuaternion slerp(const UnitQuaternion& a, const UnitQuaternion& b, double s) {
  // Work on raw components so the shortest arc can leave the w >= 0 hemisphere.
  double d = a.dot(b);
  double bw = b.w, bx = b.x, by = b.y, bz = b.z;
  if (d < 0.0) {
    d = -d;
    bw = -bw;
    bx = -bx;
    by = -by;
    bz = -bz;
  }
  double wa, wb;
  if (d > 1.0 - 1e-10) {
    wa = 1.0 - s;
    wb = s;
  } else {
    double omega = std::acos(std::min(d, 1.0));
    double so = std::sin(omega);
    wa = std::sin((1.0 - s) * omega) / so;
    wb = std::sin(s * omega) / so;
  }
  return {wa * a.w + wb * bw, wa * a.x + wb * bx, wa * a.y + wb * by, wa * a.z + wb * bz};
}

Mat3 so3_right_jacobian(const Vec3& v) {
  double theta = v.norm();
  double c1, c2;
  if (theta < kSmallAngle) {
    c1 = 0.5 - theta * theta / 24.0;
    c2 = 1.0 / 6.0 - theta * theta / 120.0;
  } else {
    double t2 = theta * theta;
    c1 = (1.0 - std::cos(theta)) / t2;
    c2 = (theta - std::sin(theta)) / (t2 * theta);
  }
  Mat3 vx = skew(v);
  return Mat3::Identity() - c1 * vx + c2 * vx * vx;
}

Mat3 so3_right_jacobian_inv(const Vec3& v) {
  double theta = v.norm();
  double c;
  if (theta < kSmallAngle) {
    c = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    double st = std::sin(theta);
    c = 1.0 / (theta * theta) - (1.0 + std::cos(theta)) / (2.0 * theta * st);
  }
  Mat3 vx = skew(v);
  return Mat3::Identity() + 0.5 * vx + c * vx * vx;
}

RigidTransform RigidTransform::operator*(const RigidTransform& rhs) const {
  return {q * rhs.q, q.rotate(rhs.t) + t};
}

RigidTransform RigidTransform::inverse() const {
  UnitQuaternion qi = q.inverse();
  return {qi, -qi.rotate(t)};
}

}  // namespace miliom
