#pragma once
// Onboard sensing: pinhole camera geometry and the noisy navigation sensors
// (GPS position/velocity, barometric altitude, attitude and body rates).
// Camera frame equals body frame: x is the optical axis, y right in the
// image, z down in the image.

#include <vantage/core.hpp>
#include <vantage/geometry.hpp>
#include <vantage/quad_dynamics.hpp>

namespace vantage::sense {

struct CameraIntrinsics {
  double focal = 320.0;  ///< px
  double cu = 320.0;     ///< px, principal point
  double cv = 240.0;     ///< px
  int width = 640;
  int height = 480;
};

struct PixelPoint {
  double u = 0.0;
  double v = 0.0;
};

/// Standard deviations of the navigation and perception noise. Zeros give a
/// noiseless run.
struct NoiseConfig {
  double gps_pos_sigma = 0.05;      ///< m
  double gps_vel_sigma = 0.02;      ///< m/s
  double altimeter_sigma = 0.02;    ///< m
  double gyro_sigma = 0.005;        ///< rad/s
  double attitude_sigma = 0.0005;   ///< rad
  double pixel_sigma = 0.5;         ///< px, detector box jitter
  double confidence_sigma = 0.003;  ///< detector confidence jitter

  static NoiseConfig zero() {
    NoiseConfig n;
    n.gps_pos_sigma = n.gps_vel_sigma = n.altimeter_sigma = 0.0;
    n.gyro_sigma = n.attitude_sigma = 0.0;
    n.pixel_sigma = n.confidence_sigma = 0.0;
    return n;
  }
};

/// World point expressed in the camera frame of a body at (position, R).
inline Vec3 world_to_camera(const Vec3& point_world, const Vec3& position,
                            const Mat3& rotation) {
  return rotation.transpose() * (point_world - position);
}

/// Pinhole projection; requires the point in front of the camera (x > 0).
inline PixelPoint project(const Vec3& p_cam, const CameraIntrinsics& intr) {
  if (!(p_cam.x() > 0.0)) {
    throw std::domain_error("projection of a point behind the camera");
  }
  PixelPoint px;
  px.u = (p_cam.y() * intr.focal + p_cam.x() * intr.cu) / p_cam.x();
  px.v = (p_cam.z() * intr.focal + p_cam.x() * intr.cv) / p_cam.x();
  return px;
}

/// Camera-frame lateral offset of a pixel column at a known depth.
inline double lateral_from_pixel(double u, double depth,
                                 const CameraIntrinsics& intr) {
  return (u - intr.cu) * depth / intr.focal;
}

/// Camera-frame vertical offset of a pixel row at a known depth.
inline double vertical_from_pixel(double v, double depth,
                                  const CameraIntrinsics& intr) {
  return (v - intr.cv) * depth / intr.focal;
}

/// Re-expresses a pixel as seen by a level camera at the same position and
/// yaw, cancelling the roll/pitch of the vehicle. Rotation about the optical
/// center is depth-free, so the mapping is exact for any scene. Throws when
/// the de-rotated ray leaves the forward hemisphere.
inline PixelPoint level_pixel(const PixelPoint& px, double roll, double pitch,
                              const CameraIntrinsics& intr) {
  const Vec3 ray_body(1.0, (px.u - intr.cu) / intr.focal,
                      (px.v - intr.cv) / intr.focal);
  const Vec3 ray_level = rot_y(pitch) * rot_x(roll) * ray_body;
  return project(ray_level, intr);
}

/// One synchronized reading of the navigation sensors.
struct SensorSample {
  Vec3 gps_position{0, 0, 0};   ///< m, world NED
  Vec3 gps_velocity{0, 0, 0};   ///< m/s, world
  double altitude = 0.0;        ///< m above ground, positive up
  Vec3 rpy{0, 0, 0};            ///< rad, (roll, pitch, yaw)
  Vec3 body_rates{0, 0, 0};     ///< rad/s
};

inline SensorSample sample_sensors(const dyn::QuadState& s,
                                   const NoiseConfig& noise, Rng& rng) {
  SensorSample out;
  for (int i = 0; i < 3; ++i) {
    out.gps_position[i] = s.position[i] + rng.normal(0.0, noise.gps_pos_sigma);
    out.gps_velocity[i] = s.velocity[i] + rng.normal(0.0, noise.gps_vel_sigma);
  }
  out.altitude = -s.position.z() + rng.normal(0.0, noise.altimeter_sigma);
  const Vec3 rpy_true = rot_to_rpy(s.rotation);
  for (int i = 0; i < 3; ++i) {
    out.rpy[i] = rpy_true[i] + rng.normal(0.0, noise.attitude_sigma);
    out.body_rates[i] = s.omega[i] + rng.normal(0.0, noise.gyro_sigma);
  }
  return out;
}

/// Body-frame velocity from fused GPS velocity and attitude. With exact
/// sensors this equals R^T v and doubles as the camera-frame ego velocity.
inline Vec3 body_velocity(const SensorSample& sample) {
  return rpy_to_rot(sample.rpy).transpose() * sample.gps_velocity;
}

}  // namespace vantage::sense
