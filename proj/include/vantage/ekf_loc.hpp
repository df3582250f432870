#pragma once
// Extended Kalman filter that localizes a world-fixed point directly in the
// camera frame. The state is the point's camera-frame position, so camera
// motion enters the prediction as the (exactly discretized) rigid transform
// between consecutive camera poses, and the pixel projection of the point is
// the measurement. Depth along the optical axis is observable only through
// motion; the filter's covariance says how much of it has been recovered.

#include <Eigen/Dense>

#include <vantage/geometry.hpp>
#include <vantage/sensors.hpp>

namespace vantage::ekf {

struct LocalizerParams {
  double process_noise = 0.01;        ///< m^2/s, isotropic random walk
  double measurement_noise = 1.0;     ///< px^2 per axis
  Vec3 initial_variance{4.0, 1.0, 1.0};  ///< m^2, camera axes
  double gate = 9.21;                 ///< chi-square, 2 dof, 99%
  double min_depth = 0.1;             ///< m, floor on the optical axis
};

class PointLocalizer {
 public:
  explicit PointLocalizer(const LocalizerParams& params,
                          const sense::CameraIntrinsics& intr)
      : params_(params), intr_(intr) {}

  void init(const Vec3& point_camera) {
    x_ = point_camera;
    x_.x() = std::max(x_.x(), params_.min_depth);
    P_ = params_.initial_variance.asDiagonal();
    initialized_ = true;
  }

  bool initialized() const { return initialized_; }

  /// Propagates through the camera's own motion over `dt`: `omega` is the
  /// camera angular rate and `v_camera` its velocity, both in camera axes.
  /// A world-fixed point seen from the moving camera obeys
  /// xdot = -omega x x - v, integrated here in closed form.
  void predict(const Vec3& omega, const Vec3& v_camera, double dt) {
    const Mat3 F = exp_so3(Vec3(-omega * dt));
    const Mat3 J = integral_exp_so3(Vec3(-omega), dt);
    x_ = F * x_ - J * v_camera;
    x_.x() = std::max(x_.x(), params_.min_depth);
    P_ = F * P_ * F.transpose() +
         dt * params_.process_noise * Mat3::Identity();
  }

  /// Pixel Jacobian of the projection at the current state.
  Eigen::Matrix<double, 2, 3> measurement_jacobian() const {
    const double f = intr_.focal;
    const double x = x_.x(), y = x_.y(), z = x_.z();
    Eigen::Matrix<double, 2, 3> H;
    H << -f * y / (x * x), f / x, 0.0,
         -f * z / (x * x), 0.0, f / x;
    return H;
  }

  /// Folds in one pixel observation of the point. Returns false when the
  /// innovation fails the chi-square gate; the state is left untouched then.
  bool update(const sense::PixelPoint& measured) {
    const sense::PixelPoint predicted = sense::project(x_, intr_);
    Vec2 innovation(measured.u - predicted.u, measured.v - predicted.v);

    const Eigen::Matrix<double, 2, 3> H = measurement_jacobian();
    const Eigen::Matrix2d R =
        params_.measurement_noise * Eigen::Matrix2d::Identity();
    const Eigen::Matrix2d S = H * P_ * H.transpose() + R;
    const Eigen::Matrix2d S_inv = S.inverse();
    last_nis_ = innovation.dot(S_inv * innovation);
    if (last_nis_ > params_.gate) return false;

    const Eigen::Matrix<double, 3, 2> K = P_ * H.transpose() * S_inv;
    x_ += K * innovation;
    x_.x() = std::max(x_.x(), params_.min_depth);
    P_ = (Mat3::Identity() - K * H) * P_;
    P_ = (0.5 * (P_ + P_.transpose())).eval();
    return true;
  }

  const Vec3& state() const { return x_; }
  const Mat3& covariance() const { return P_; }
  double last_nis() const { return last_nis_; }

 private:
  LocalizerParams params_;
  sense::CameraIntrinsics intr_;
  Vec3 x_ = Vec3::Zero();
  Mat3 P_ = Mat3::Identity();
  double last_nis_ = 0.0;
  bool initialized_ = false;
};

}  // namespace vantage::ekf
