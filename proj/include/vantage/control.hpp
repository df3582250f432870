#pragma once
// Flight control on the rigid-body model: geometric path following with the
// position error projected onto the trajectory's tangential, normal and
// binormal directions and fed back through per-direction gains; a hover PID
// for small setpoint moves; and the vertical visual-servo estimator that
// converts pixel error to altitude setpoints through the learned ratio
// lambda. Thrust and attitude extraction are shared: a desired acceleration
// becomes collective thrust along -body z plus an attitude command tracked
// by a proportional rotation/rate law.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <vantage/geometry.hpp>
#include <vantage/planning.hpp>
#include <vantage/quad_dynamics.hpp>

namespace vantage::ctrl {

struct ControlGains {
  Vec3 k_pos{2.0, 4.0, 4.0};  ///< 1/s^2, per (tangential, normal, binormal)
  Vec3 k_vel{2.0, 3.0, 3.0};  ///< 1/s
  double k_rot = 4.0;         ///< attitude error gain
  double k_omega = 0.8;       ///< body-rate gain
  double hover_kp = 2.0;      ///< hover PID, shared by the three axes
  double hover_ki = 0.2;
  double hover_kd = 2.6;
  double integrator_limit = 0.25;   ///< m s, per-axis anti-windup clamp
  double hover_accel_max = 8.829;   ///< m/s^2, per-axis demand clamp
};

/// Orthonormal path frame: tangent, normal, binormal.
struct PathFrame {
  Vec3 tangent;
  Vec3 normal;
  Vec3 binormal;
};

/// Control command plus the telemetry the mission loop logs.
struct ControlOutput {
  dyn::ControlInput input;
  Vec3 error_projected{0.0, 0.0, 0.0};  ///< position error in the path frame
  bool thrust_saturated = false;
  bool torque_saturated = false;
};

namespace detail {

inline Vec3 safe_normalized(const Vec3& v, const Vec3& fallback) {
  const double n = v.norm();
  return n > 1e-9 ? Vec3(v / n) : fallback;
}

}  // namespace detail

/// Frame construction with explicit degeneracy ladder: the tangent comes
/// from the reference velocity, falling back to the chord p0 -> pf and then
/// to the world axes when the path is a point; the normal is the reference
/// acceleration with its tangential component removed, falling back to
/// world-z x tangent (and world-x x tangent for vertical paths).
inline PathFrame path_frame(const plan::TrajectorySample& ref,
                            const plan::CubicTrajectory& traj) {
  const Vec3 chord =
      traj.eval(traj.tf).position - traj.eval(traj.t0).position;
  PathFrame f;
  f.tangent = detail::safe_normalized(
      ref.velocity, detail::safe_normalized(chord, Vec3::UnitX()));
  const Vec3 a_perp =
      ref.acceleration - ref.acceleration.dot(f.tangent) * f.tangent;
  Vec3 normal_fallback = Vec3::UnitZ().cross(f.tangent);
  if (normal_fallback.norm() < 1e-9) {
    normal_fallback = Vec3::UnitX().cross(f.tangent);
  }
  f.normal = detail::safe_normalized(a_perp, normal_fallback.normalized());
  f.binormal = f.tangent.cross(f.normal);
  return f;
}

/// Half the vee of (R_des^T R - R^T R_des): zero exactly when R = R_des.
inline Vec3 attitude_error(const Mat3& rotation_des, const Mat3& rotation) {
  return 0.5 * vee(rotation_des.transpose() * rotation -
                   rotation.transpose() * rotation_des);
}

/// Maps a desired world acceleration and yaw to thrust along -body z plus
/// torques tracking the implied attitude. Thrust and torques are hard
/// clamped to the actuator envelope and the clamps are flagged.
inline ControlOutput accel_to_input(const dyn::QuadState& state,
                                    const Vec3& accel_des, double yaw_des,
                                    const ControlGains& gains,
                                    const dyn::QuadParams& params) {
  ControlOutput out;
  const Vec3 gravity(0.0, 0.0, params.gravity);

  // m a = -T R e3 + m g e3, so body z must point along g e3 - a_des.
  const Vec3 force_dir = gravity - accel_des;
  const double thrust_raw = params.mass * force_dir.norm();
  out.input.thrust = std::clamp(thrust_raw, 0.0, params.thrust_max);
  out.thrust_saturated = thrust_raw > params.thrust_max;

  const Vec3 body_z = detail::safe_normalized(force_dir, Vec3::UnitZ());
  const Vec3 heading(std::cos(yaw_des), std::sin(yaw_des), 0.0);
  Vec3 body_y = body_z.cross(heading);
  if (body_y.norm() < 1e-9) {
    body_y = body_z.cross(Vec3(-std::sin(yaw_des), std::cos(yaw_des), 0.0));
  }
  body_y.normalize();
  const Vec3 body_x = body_y.cross(body_z);
  Mat3 rotation_des;
  rotation_des.col(0) = body_x;
  rotation_des.col(1) = body_y;
  rotation_des.col(2) = body_z;

  const Vec3 e_rot = attitude_error(rotation_des, state.rotation);
  const Vec3 torque_raw = -gains.k_rot * e_rot - gains.k_omega * state.omega;
  for (int i = 0; i < 3; ++i) {
    out.input.torque[i] =
        std::clamp(torque_raw[i], -params.torque_max, params.torque_max);
    out.torque_saturated |= std::abs(torque_raw[i]) > params.torque_max;
  }
  return out;
}

/// Trajectory-tracking law: position and velocity errors are projected onto
/// the path frame, scaled per direction, and added to the feedforward
/// acceleration of the reference.
inline ControlOutput path_follow(const dyn::QuadState& state,
                                 const plan::CubicTrajectory& traj, double t,
                                 double yaw_des, const ControlGains& gains,
                                 const dyn::QuadParams& params) {
  plan::TrajectorySample ref = traj.eval(t);
  if (ref.clamped) {
    // Past either end the reference degenerates to holding the endpoint;
    // replaying the endpoint's feedforward would push the vehicle off it.
    ref.velocity.setZero();
    ref.acceleration.setZero();
  }
  const PathFrame frame = path_frame(ref, traj);

  const Vec3 e_pos = state.position - ref.position;
  const Vec3 e_vel = state.velocity - ref.velocity;
  const Vec3 e_pos_proj(e_pos.dot(frame.tangent), e_pos.dot(frame.normal),
                        e_pos.dot(frame.binormal));
  const Vec3 e_vel_proj(e_vel.dot(frame.tangent), e_vel.dot(frame.normal),
                        e_vel.dot(frame.binormal));

  const Vec3 feedback_proj = -(gains.k_pos.cwiseProduct(e_pos_proj) +
                               gains.k_vel.cwiseProduct(e_vel_proj));
  const Vec3 feedback = feedback_proj.x() * frame.tangent +
                        feedback_proj.y() * frame.normal +
                        feedback_proj.z() * frame.binormal;

  ControlOutput out = accel_to_input(state, ref.acceleration + feedback,
                                     yaw_des, gains, params);
  out.error_projected = e_pos_proj;
  return out;
}

/// Integrator state owned by the caller across hover steps.
struct PidState {
  Vec3 integral{0.0, 0.0, 0.0};
};

/// Per-axis position PID around hover. The derivative acts on velocity, the
/// integral is clamped per axis, and the resulting acceleration goes through
/// the same thrust/attitude extraction as path following.
inline ControlOutput hover_pid(const dyn::QuadState& state,
                               const Vec3& setpoint, double yaw_des,
                               const ControlGains& gains,
                               const dyn::QuadParams& params, PidState& pid,
                               double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("hover_pid: dt must be > 0");
  const Vec3 e_pos = setpoint - state.position;
  pid.integral += e_pos * dt;
  for (int i = 0; i < 3; ++i) {
    pid.integral[i] = std::clamp(pid.integral[i], -gains.integrator_limit,
                                 gains.integrator_limit);
  }
  Vec3 accel_des = gains.hover_kp * e_pos + gains.hover_ki * pid.integral -
                   gains.hover_kd * state.velocity;
  // Setpoint moves are not pre-planned, so far targets would otherwise demand
  // arbitrarily large tilt; the clamp keeps long legs inside the envelope.
  for (int i = 0; i < 3; ++i) {
    accel_des[i] =
        std::clamp(accel_des[i], -gains.hover_accel_max, gains.hover_accel_max);
  }
  ControlOutput out = accel_to_input(state, accel_des, yaw_des, gains, params);
  out.error_projected = -e_pos;
  return out;
}

/// Pixels-per-meter ratio between the tracked image point and the vehicle
/// altitude, learned from stacked consecutive differences during the
/// 1 m-setpoint climb.
struct PbvsEstimator {
  double lambda = 0.0;           ///< px per meter of altitude
  int m_required = 5;            ///< consecutive consistent ratios to accept
  bool converged = false;
  std::vector<std::pair<double, double>> samples;  ///< (dpixel, daltitude)
  bool has_prev = false;
  double prev_pixel = 0.0;       ///< previous y_p - v_0
  double prev_altitude = 0.0;    ///< previous altitude, m above ground
  std::vector<double> ratios;
};

/// Stacks one (pixel, altitude) reading taken after a completed 1 m vertical
/// setpoint. Altitude is height above ground (-z in world coordinates).
/// Near-zero altitude differences are discarded; lambda is the mean ratio
/// and convergence requires the last m_required ratios to agree within 2%.
inline void pbvs_collect(PbvsEstimator& est, double y_p, double v_0,
                         double altitude) {
  const double pixel = y_p - v_0;
  if (!est.has_prev) {
    est.has_prev = true;
    est.prev_pixel = pixel;
    est.prev_altitude = altitude;
    return;
  }
  const double dpixel = pixel - est.prev_pixel;
  const double daltitude = altitude - est.prev_altitude;
  est.prev_pixel = pixel;
  est.prev_altitude = altitude;
  if (std::abs(daltitude) < 1e-9) return;

  est.samples.emplace_back(dpixel, daltitude);
  est.ratios.push_back(dpixel / daltitude);
  double sum = 0.0;
  for (double r : est.ratios) sum += r;
  est.lambda = sum / static_cast<double>(est.ratios.size());

  if (est.ratios.size() >= static_cast<std::size_t>(est.m_required)) {
    const auto last = est.ratios.end() - est.m_required;
    double lo = *last, hi = *last, mean = 0.0;
    for (auto it = last; it != est.ratios.end(); ++it) {
      lo = std::min(lo, *it);
      hi = std::max(hi, *it);
      mean += *it;
    }
    mean /= est.m_required;
    if (std::abs(mean) > 1e-12 && (hi - lo) < 0.02 * std::abs(mean)) {
      est.converged = true;
    }
  }
}

/// Altitude setpoint driving the tracked pixel toward the image center:
/// z_des = z_w + (y_p - v_0)/lambda in world (down-positive) coordinates, so
/// a target above center commands a climb.
inline double pbvs_command(const PbvsEstimator& est, double z_w, double y_p,
                           double v_0) {
  if (!est.converged) {
    throw std::logic_error("pbvs_command: estimator not converged");
  }
  return z_w + (y_p - v_0) / est.lambda;
}

}  // namespace vantage::ctrl
