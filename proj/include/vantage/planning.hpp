#pragma once
// Minimum-acceleration timing laws. Each world axis follows a cubic
// polynomial in time whose coefficients minimize the integral of squared
// acceleration subject to boundary position and velocity. Four constraints
// pin four coefficients, so the optimum coincides with plain cubic
// interpolation; the QP is solved anyway, in normalized time for
// conditioning, and the agreement is asserted on every plan.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <vantage/core.hpp>
#include <vantage/geometry.hpp>

namespace vantage::plan {

struct BoundaryConditions {
  Vec3 p0{0.0, 0.0, 0.0};  ///< m, world
  Vec3 v0{0.0, 0.0, 0.0};  ///< m/s
  Vec3 pf{0.0, 0.0, 0.0};
  Vec3 vf{0.0, 0.0, 0.0};
};

struct TrajectorySample {
  Vec3 position;
  Vec3 velocity;
  Vec3 acceleration;
  bool clamped = false;  ///< query time fell outside [t0, tf]
};

struct CubicTrajectory {
  /// Row per world axis, columns are c0..c3 in (t - t0) powers.
  Eigen::Matrix<double, 3, 4> coeffs = Eigen::Matrix<double, 3, 4>::Zero();
  double t0 = 0.0;
  double tf = 1.0;

  double duration() const { return tf - t0; }

  /// Polynomial and its first two derivatives. Outside [t0, tf] the query is
  /// clamped to the nearest endpoint and flagged.
  TrajectorySample eval(double t) const {
    TrajectorySample out;
    double tau = t - t0;
    if (tau < 0.0 || tau > tf - t0) {
      out.clamped = true;
      tau = std::clamp(tau, 0.0, tf - t0);
    }
    for (int axis = 0; axis < 3; ++axis) {
      const auto& c = coeffs.row(axis);
      out.position[axis] = c[0] + tau * (c[1] + tau * (c[2] + tau * c[3]));
      out.velocity[axis] = c[1] + tau * (2.0 * c[2] + 3.0 * tau * c[3]);
      out.acceleration[axis] = 2.0 * c[2] + 6.0 * tau * c[3];
    }
    return out;
  }
};

namespace detail {

/// Gram matrix of the acceleration basis b(tau) = (0, 0, 2, 6 tau) over
/// [0, T]: the acceleration energy of one axis is c^T G c.
inline Eigen::Matrix4d acceleration_gram(double T) {
  Eigen::Matrix4d g = Eigen::Matrix4d::Zero();
  g(2, 2) = 4.0 * T;
  g(2, 3) = 6.0 * T * T;
  g(3, 2) = g(2, 3);
  g(3, 3) = 12.0 * T * T * T;
  return g;
}

/// Direct boundary-value interpolation in unit time s = tau/T, coefficients
/// of p(s) = a0 + a1 s + a2 s^2 + a3 s^3.
inline Eigen::Vector4d hermite_unit(double p0, double v0, double pf, double vf,
                                    double T) {
  const double d = pf - p0;
  Eigen::Vector4d a;
  a[0] = p0;
  a[1] = v0 * T;
  a[2] = 3.0 * d - (2.0 * v0 + vf) * T;
  a[3] = -2.0 * d + (v0 + vf) * T;
  return a;
}

}  // namespace detail

/// Acceleration energy Gamma = sum over axes of the closed-form quadratic,
/// equal to the integral of |r''(t)|^2 over the trajectory's interval.
inline double acceleration_cost(const CubicTrajectory& traj) {
  const Eigen::Matrix4d g = detail::acceleration_gram(traj.duration());
  double total = 0.0;
  for (int axis = 0; axis < 3; ++axis) {
    const Eigen::Vector4d c = traj.coeffs.row(axis).transpose();
    total += c.dot(g * c);
  }
  return total;
}

/// Per-axis equality-constrained QP: minimize acceleration energy subject to
/// endpoint position and velocity. Solved through the KKT system in unit
/// time; the result must match direct interpolation to 1e-9 and is asserted
/// against it before being returned.
inline CubicTrajectory plan_cubic(const BoundaryConditions& bc, double t0,
                                  double tf) {
  const double T = tf - t0;
  if (!(T >= 1e-6)) {
    throw std::invalid_argument("plan_cubic: degenerate interval");
  }

  // In s = (t - t0)/T the constraint matrix is constant and the KKT system
  // stays well conditioned for any duration.
  Eigen::Matrix4d constraints;
  constraints << 1.0, 0.0, 0.0, 0.0,
                 0.0, 1.0, 0.0, 0.0,
                 1.0, 1.0, 1.0, 1.0,
                 0.0, 1.0, 2.0, 3.0;
  const Eigen::Matrix4d gram = detail::acceleration_gram(1.0);

  Eigen::Matrix<double, 8, 8> kkt = Eigen::Matrix<double, 8, 8>::Zero();
  kkt.topLeftCorner<4, 4>() = 2.0 * gram;
  kkt.topRightCorner<4, 4>() = constraints.transpose();
  kkt.bottomLeftCorner<4, 4>() = constraints;
  const Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> solver(kkt);

  CubicTrajectory traj;
  traj.t0 = t0;
  traj.tf = tf;
  for (int axis = 0; axis < 3; ++axis) {
    Eigen::Matrix<double, 8, 1> rhs = Eigen::Matrix<double, 8, 1>::Zero();
    rhs[4] = bc.p0[axis];
    rhs[5] = bc.v0[axis] * T;
    rhs[6] = bc.pf[axis];
    rhs[7] = bc.vf[axis] * T;
    const Eigen::Vector4d unit_qp = solver.solve(rhs).head<4>();
    const Eigen::Vector4d unit_direct = detail::hermite_unit(
        bc.p0[axis], bc.v0[axis], bc.pf[axis], bc.vf[axis], T);
    const double gap = (unit_qp - unit_direct).norm();
    if (gap > 1e-9 * std::max(1.0, unit_direct.norm())) {
      throw NumericalFault("plan_cubic: QP and interpolation disagree");
    }
    double scale = 1.0;
    for (int i = 0; i < 4; ++i) {
      traj.coeffs(axis, i) = unit_qp[i] / scale;
      scale *= T;
    }
  }
  return traj;
}

/// Largest per-axis |acceleration| over the interval. Acceleration is linear
/// in time, so the extremes sit at the endpoints.
inline double peak_acceleration(const CubicTrajectory& traj) {
  double peak = 0.0;
  for (int axis = 0; axis < 3; ++axis) {
    const double a0 = 2.0 * traj.coeffs(axis, 2);
    const double af = a0 + 6.0 * traj.coeffs(axis, 3) * traj.duration();
    peak = std::max({peak, std::abs(a0), std::abs(af)});
  }
  return peak;
}

/// Shortest duration from a geometric ladder (factor 1.25, seeded by
/// distance over cruise speed, floored at half a second) whose cubic keeps
/// every per-axis |acceleration| at or below a_max. For rest-to-rest legs
/// the per-axis peak is 6 d / T^2, which bounds the search.
inline double choose_duration(const BoundaryConditions& bc, double a_max,
                              double v_cruise = 1.0) {
  if (!(a_max > 0.0) || !(v_cruise > 0.0)) {
    throw std::invalid_argument("choose_duration: non-positive limits");
  }
  double T = std::max(0.5, (bc.pf - bc.p0).norm() / v_cruise);
  // The epsilon admits candidates sitting exactly on the bound, where the
  // solve's rounding would otherwise push them onto the next rung.
  while (peak_acceleration(plan_cubic(bc, 0.0, T)) > a_max + 1e-9) {
    T *= 1.25;
  }
  return T;
}

/// Chains one cubic per leg through a waypoint sequence. Interior velocities
/// take the cruise speed along the direction bisecting the incoming and
/// outgoing legs, so consecutive segments share position and velocity
/// exactly; endpoints are rest unless the caller supplies boundary
/// velocities.
inline std::vector<CubicTrajectory> plan_waypoints(
    const std::vector<Vec3>& points, double a_max, double v_cruise = 1.0,
    const Vec3& v_start = Vec3::Zero(), const Vec3& v_end = Vec3::Zero()) {
  if (points.size() < 2) {
    throw std::invalid_argument("plan_waypoints: need at least two points");
  }
  const std::size_t legs = points.size() - 1;
  std::vector<Vec3> velocities(points.size(), Vec3::Zero());
  velocities.front() = v_start;
  velocities.back() = v_end;
  for (std::size_t i = 1; i + 1 < points.size(); ++i) {
    const Vec3 incoming = points[i] - points[i - 1];
    const Vec3 outgoing = points[i + 1] - points[i];
    Vec3 dir = Vec3::Zero();
    if (incoming.norm() > 1e-12) dir += incoming.normalized();
    if (outgoing.norm() > 1e-12) dir += outgoing.normalized();
    if (dir.norm() > 1e-12) {
      velocities[i] = v_cruise * dir.normalized();
    }
  }

  std::vector<CubicTrajectory> out;
  out.reserve(legs);
  double t_cursor = 0.0;
  for (std::size_t i = 0; i < legs; ++i) {
    BoundaryConditions bc;
    bc.p0 = points[i];
    bc.v0 = velocities[i];
    bc.pf = points[i + 1];
    bc.vf = velocities[i + 1];
    const double T = choose_duration(bc, a_max, v_cruise);
    out.push_back(plan_cubic(bc, t_cursor, t_cursor + T));
    t_cursor += T;
  }
  return out;
}

}  // namespace vantage::plan
