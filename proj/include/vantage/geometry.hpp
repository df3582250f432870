#pragma once
// Frames and rotation helpers. The world frame is north-east-down: +z points
// into the ground, altitude above ground is -z, and airborne points carry
// negative z. Body frame: x forward, y right, z down. The camera is rigid on
// the body with its optical axis along body x.

#include <Eigen/Dense>
#include <cmath>

namespace vantage {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

/// Skew-symmetric matrix such that hat(w) * x == w.cross(x).
inline Mat3 hat(const Vec3& w) {
  Mat3 m;
  m << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
      -w.y(), w.x(), 0.0;
  return m;
}

/// Inverse of hat: extracts the axial vector of a skew-symmetric matrix.
inline Vec3 vee(const Mat3& m) {
  return Vec3(m(2, 1), m(0, 2), m(1, 0));
}

inline double wrap_two_pi(double a) {
  a = std::fmod(a, 2.0 * M_PI);
  if (a < 0.0) a += 2.0 * M_PI;
  return a;
}

inline double wrap_pi(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0.0) a += 2.0 * M_PI;
  return a - M_PI;
}

inline Mat3 rot_x(double a) {
  Mat3 m;
  m << 1, 0, 0,
       0, std::cos(a), -std::sin(a),
       0, std::sin(a), std::cos(a);
  return m;
}

inline Mat3 rot_y(double a) {
  Mat3 m;
  m << std::cos(a), 0, std::sin(a),
       0, 1, 0,
      -std::sin(a), 0, std::cos(a);
  return m;
}

inline Mat3 rot_z(double a) {
  Mat3 m;
  m << std::cos(a), -std::sin(a), 0,
       std::sin(a), std::cos(a), 0,
       0, 0, 1;
  return m;
}

/// Intrinsic Z-Y-X composition: yaw about z, then pitch about y, then roll
/// about x. rpy = (roll, pitch, yaw).
inline Mat3 rpy_to_rot(const Vec3& rpy) {
  return rot_z(rpy.z()) * rot_y(rpy.y()) * rot_x(rpy.x());
}

/// Inverse of rpy_to_rot away from the pitch = +-pi/2 singularity.
inline Vec3 rot_to_rpy(const Mat3& r) {
  const double pitch = -std::asin(std::clamp(r(2, 0), -1.0, 1.0));
  const double roll = std::atan2(r(2, 1), r(2, 2));
  const double yaw = std::atan2(r(1, 0), r(0, 0));
  return Vec3(roll, pitch, yaw);
}

/// Rodrigues formula, exp(hat(w)). Series fallback near zero keeps the result
/// smooth for integrator use.
inline Mat3 exp_so3(const Vec3& w) {
  const double angle = w.norm();
  const Mat3 k = hat(w);
  if (angle < 1e-9) {
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const double s = std::sin(angle) / angle;
  const double c = (1.0 - std::cos(angle)) / (angle * angle);
  return Mat3::Identity() + s * k + c * k * k;
}

/// Closed form of the integral  J = int_0^T exp(hat(w) t) dt.
inline Mat3 integral_exp_so3(const Vec3& w, double t_final) {
  const double angle = w.norm();
  const Mat3 a = hat(w);
  const double x = angle * t_final;
  if (x < 1e-6) {
    return t_final * Mat3::Identity() +
           (t_final * t_final / 2.0) * a +
           (t_final * t_final * t_final / 6.0) * a * a;
  }
  const double c1 = (1.0 - std::cos(x)) / (angle * angle);
  const double c2 = (x - std::sin(x)) / (angle * angle * angle);
  return t_final * Mat3::Identity() + c1 * a + c2 * a * a;
}

/// Nearest orthonormal matrix (polar factor). Newton iteration converges
/// quadratically for inputs already close to orthonormal, which is the case
/// after one integrator step.
inline Mat3 orthonormalize(const Mat3& r) {
  Mat3 q = r;
  for (int i = 0; i < 3; ++i) {
    q = 0.5 * (q + q.inverse().transpose());
  }
  return q;
}

}  // namespace vantage
