#pragma once
// Rigid-body quadrotor model in the north-east-down world frame. Thrust acts
// along negative body z (upward when level), gravity along +z, and a
// quadratic body-frame drag opposes velocity. Integration is fixed-step RK4
// with the rotation matrix re-orthonormalized (polar factor) every step.

#include <cmath>

#include <vantage/core.hpp>
#include <vantage/geometry.hpp>

namespace vantage::dyn {

struct QuadParams {
  double mass = 1.0;                     ///< kg
  Vec3 inertia{0.01, 0.01, 0.02};        ///< kg m^2, body-diagonal
  Vec3 drag{0.1, 0.1, 0.1};              ///< quadratic drag, body-diagonal
  double gravity = 9.81;                 ///< m/s^2
  double thrust_max = 4.0 * 9.81;        ///< N, 4 mg hover margin
  double torque_max = 0.2;               ///< N m per body axis
  double dt = 0.0025;                    ///< s, integrator step
};

struct QuadState {
  Vec3 position{0.0, 0.0, 0.0};   ///< m, world NED
  Vec3 velocity{0.0, 0.0, 0.0};   ///< m/s, world
  Mat3 rotation = Mat3::Identity();  ///< body to world
  Vec3 omega{0.0, 0.0, 0.0};      ///< rad/s, body rates
};

/// Collective thrust (N, non-negative) and body torques (N m).
struct ControlInput {
  double thrust = 0.0;
  Vec3 torque{0.0, 0.0, 0.0};
};

struct StateDerivative {
  Vec3 position_dot;
  Vec3 velocity_dot;
  Mat3 rotation_dot;
  Vec3 omega_dot;
};

/// Continuous-time dynamics. Drag enters as -(1/m) R D R^T v |v|, a
/// body-shaped quadratic opposing the world velocity.
inline StateDerivative derivatives(const QuadState& s, const ControlInput& u,
                                   const QuadParams& p) {
  StateDerivative d;
  d.position_dot = s.velocity;
  const Vec3 thrust_world = s.rotation * Vec3(0.0, 0.0, u.thrust);
  const Vec3 drag_world = s.rotation * p.drag.asDiagonal() *
                          s.rotation.transpose() * s.velocity *
                          s.velocity.norm();
  d.velocity_dot = -thrust_world / p.mass + Vec3(0.0, 0.0, p.gravity) -
                   drag_world / p.mass;
  d.rotation_dot = s.rotation * hat(s.omega);
  const Vec3 inertia_omega = p.inertia.asDiagonal() * s.omega;
  d.omega_dot = (u.torque - s.omega.cross(inertia_omega))
                    .cwiseQuotient(p.inertia);
  return d;
}

namespace detail {

inline QuadState add_scaled(const QuadState& s, const StateDerivative& d,
                            double h) {
  QuadState r;
  r.position = s.position + h * d.position_dot;
  r.velocity = s.velocity + h * d.velocity_dot;
  r.rotation = s.rotation + h * d.rotation_dot;
  r.omega = s.omega + h * d.omega_dot;
  return r;
}

inline bool finite(const QuadState& s) {
  return s.position.allFinite() && s.velocity.allFinite() &&
         s.rotation.allFinite() && s.omega.allFinite();
}

}  // namespace detail

/// One RK4 step of length p.dt. Inputs are clamped to the actuator envelope.
/// Throws NumericalFault if the state stops being finite.
inline QuadState step(const QuadState& s, const ControlInput& u_raw,
                      const QuadParams& p) {
  ControlInput u;
  u.thrust = std::clamp(u_raw.thrust, 0.0, p.thrust_max);
  for (int i = 0; i < 3; ++i) {
    u.torque[i] = std::clamp(u_raw.torque[i], -p.torque_max, p.torque_max);
  }

  const double h = p.dt;
  const StateDerivative k1 = derivatives(s, u, p);
  const StateDerivative k2 = derivatives(detail::add_scaled(s, k1, h / 2), u, p);
  const StateDerivative k3 = derivatives(detail::add_scaled(s, k2, h / 2), u, p);
  const StateDerivative k4 = derivatives(detail::add_scaled(s, k3, h), u, p);

  QuadState next;
  next.position = s.position + (h / 6.0) * (k1.position_dot +
                  2.0 * k2.position_dot + 2.0 * k3.position_dot +
                  k4.position_dot);
  next.velocity = s.velocity + (h / 6.0) * (k1.velocity_dot +
                  2.0 * k2.velocity_dot + 2.0 * k3.velocity_dot +
                  k4.velocity_dot);
  next.rotation = s.rotation + (h / 6.0) * (k1.rotation_dot +
                  2.0 * k2.rotation_dot + 2.0 * k3.rotation_dot +
                  k4.rotation_dot);
  next.omega = s.omega + (h / 6.0) * (k1.omega_dot + 2.0 * k2.omega_dot +
               2.0 * k3.omega_dot + k4.omega_dot);
  next.rotation = orthonormalize(next.rotation);

  if (!detail::finite(next)) {
    throw NumericalFault("quad state diverged (non-finite after step)");
  }
  return next;
}

/// Hover thrust for the given parameters.
inline double hover_thrust(const QuadParams& p) { return p.mass * p.gravity; }

}  // namespace vantage::dyn
