#include <catch2/catch_amalgamated.hpp>

#include <vantage/control.hpp>
#include <vantage/core.hpp>
#include <vantage/planning.hpp>
#include <vantage/quad_dynamics.hpp>

using namespace vantage;
using Catch::Approx;

namespace {

Mat3 random_rotation(Rng& rng) {
  const Vec3 axis =
      Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
  return exp_so3(axis * rng.uniform(0.0, M_PI));
}

/// Straight constant-velocity reference along +x at fixed altitude.
plan::CubicTrajectory straight_line() {
  plan::BoundaryConditions bc;
  bc.p0 = Vec3(0.0, 0.0, -40.0);
  bc.pf = Vec3(5.0, 0.0, -40.0);
  bc.v0 = Vec3(1.0, 0.0, 0.0);
  bc.vf = Vec3(1.0, 0.0, 0.0);
  return plan::plan_cubic(bc, 0.0, 5.0);
}

/// Advances the plant under a fixed-cadence controller callback.
template <typename Controller>
dyn::QuadState simulate(dyn::QuadState state, const dyn::QuadParams& plant,
                        double duration, double control_dt,
                        Controller controller) {
  const int control_steps = static_cast<int>(std::round(duration / control_dt));
  const int substeps = static_cast<int>(std::round(control_dt / plant.dt));
  for (int k = 0; k < control_steps; ++k) {
    const dyn::ControlInput u = controller(state, k * control_dt);
    for (int i = 0; i < substeps; ++i) state = dyn::step(state, u, plant);
  }
  return state;
}

}  // namespace

TEST_CASE("hat and vee round trip exactly") {
  const Vec3 w(0.3, -1.7, 2.2);
  CHECK(vee(hat(w)) == w);
}

TEST_CASE("attitude error vanishes exactly when attitudes agree") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat3 r = random_rotation(rng);
    CHECK(ctrl::attitude_error(r, r).norm() == Approx(0.0).margin(1e-14));

    const Mat3 r_other = random_rotation(rng);
    if (ctrl::attitude_error(r_other, r).norm() < 1e-12) {
      CHECK((r - r_other).norm() < 1e-9);
    }
  }
}

TEST_CASE("attitude error about one axis is the sine of the angle") {
  for (double angle : {0.1, 0.5, 1.2}) {
    const Vec3 e = ctrl::attitude_error(Mat3::Identity(), rot_z(angle));
    CHECK(e.x() == Approx(0.0).margin(1e-12));
    CHECK(e.y() == Approx(0.0).margin(1e-12));
    CHECK(e.z() == Approx(std::sin(angle)).margin(1e-12));
  }
}

TEST_CASE("path frame projection reconstructs the error exactly") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    plan::BoundaryConditions bc;
    for (int i = 0; i < 3; ++i) {
      bc.p0[i] = rng.uniform(-10, 10);
      bc.pf[i] = rng.uniform(-10, 10);
      bc.v0[i] = rng.uniform(-2, 2);
      bc.vf[i] = rng.uniform(-2, 2);
    }
    const auto traj = plan::plan_cubic(bc, 0.0, 4.0);
    const auto ref = traj.eval(rng.uniform(0.0, 4.0));
    const ctrl::PathFrame f = ctrl::path_frame(ref, traj);

    CHECK(f.tangent.norm() == Approx(1.0).margin(1e-12));
    CHECK(f.normal.norm() == Approx(1.0).margin(1e-12));
    CHECK(f.binormal.norm() == Approx(1.0).margin(1e-12));
    CHECK(f.tangent.dot(f.normal) == Approx(0.0).margin(1e-12));
    CHECK(f.tangent.dot(f.binormal) == Approx(0.0).margin(1e-12));
    CHECK(f.normal.dot(f.binormal) == Approx(0.0).margin(1e-12));

    const Vec3 e(rng.normal(), rng.normal(), rng.normal());
    const Vec3 rebuilt = e.dot(f.tangent) * f.tangent +
                         e.dot(f.normal) * f.normal +
                         e.dot(f.binormal) * f.binormal;
    CHECK((rebuilt - e).norm() < 1e-12);
  }
}

TEST_CASE("on-trajectory flight commands hover thrust and zero torque") {
  const auto traj = straight_line();
  const dyn::QuadParams params;
  const ctrl::ControlGains gains;

  dyn::QuadState state;
  state.position = traj.eval(2.0).position;
  state.velocity = traj.eval(2.0).velocity;
  const double yaw = 0.7;
  state.rotation = rot_z(yaw);

  const auto out = ctrl::path_follow(state, traj, 2.0, yaw, gains, params);
  CHECK(out.input.thrust == Approx(params.mass * params.gravity).margin(1e-9));
  CHECK(out.input.torque.norm() == Approx(0.0).margin(1e-9));
  CHECK(out.error_projected.norm() == Approx(0.0).margin(1e-9));
  CHECK_FALSE(out.thrust_saturated);
  CHECK_FALSE(out.torque_saturated);
}

TEST_CASE("tangential offset produces tangential-only feedback") {
  const auto traj = straight_line();
  const dyn::QuadParams params;
  const ctrl::ControlGains gains;

  const auto ref = traj.eval(2.0);
  dyn::QuadState state;
  state.position = ref.position + Vec3(0.1, 0.0, 0.0);
  state.velocity = ref.velocity;

  const auto out = ctrl::path_follow(state, traj, 2.0, 0.0, gains, params);
  CHECK(out.error_projected.x() == Approx(0.1).margin(1e-12));
  CHECK(out.error_projected.y() == Approx(0.0).margin(1e-9));
  CHECK(out.error_projected.z() == Approx(0.0).margin(1e-9));

  // Reconstruct the expected command: a_des = -k_pos_t * 0.1 along +x, so
  // the thrust vector tips backward while its magnitude exceeds hover by the
  // horizontal demand only.
  const Vec3 a_des(-gains.k_pos.x() * 0.1, 0.0, 0.0);
  const Vec3 force_dir = Vec3(0.0, 0.0, params.gravity) - a_des;
  CHECK(out.input.thrust ==
        Approx(params.mass * force_dir.norm()).margin(1e-9));

  // The same offset along the binormal (world +z here) engages the stiffer
  // binormal gain instead.
  dyn::QuadState below;
  below.position = ref.position + Vec3(0.0, 0.0, 0.1);
  below.velocity = ref.velocity;
  const auto out_b = ctrl::path_follow(below, traj, 2.0, 0.0, gains, params);
  CHECK(out_b.error_projected.z() == Approx(0.1).margin(1e-12));
  CHECK(out_b.input.thrust ==
        Approx(params.mass * (params.gravity + gains.k_pos.z() * 0.1))
            .margin(1e-9));
}

TEST_CASE("closed-loop smoothstep tracks within a decimeter") {
  dyn::QuadParams params;
  const ctrl::ControlGains gains;
  plan::BoundaryConditions bc;
  bc.p0 = Vec3(0.0, 0.0, -40.0);
  bc.pf = Vec3(5.0, 0.0, -40.0);
  const auto traj = plan::plan_cubic(bc, 0.0, 5.0);

  dyn::QuadState state;
  state.position = bc.p0;
  double max_err = 0.0;
  const double control_dt = 0.01;
  dyn::QuadState s = state;
  for (int k = 0; k < 900; ++k) {
    const double t = k * control_dt;
    const auto out = ctrl::path_follow(s, traj, t, 0.0, gains, params);
    for (int i = 0; i < 4; ++i) s = dyn::step(s, out.input, params);
    if (t <= 5.0) {
      max_err = std::max(
          max_err, (s.position - traj.eval(t + control_dt).position).norm());
    }
  }
  CHECK(max_err < 0.1);
  // After the end of the trajectory the vehicle parks on the endpoint.
  CHECK((s.position - bc.pf).norm() < 0.02);
}

TEST_CASE("hover at the setpoint commands exact hover thrust") {
  const dyn::QuadParams params;
  const ctrl::ControlGains gains;
  dyn::QuadState state;
  state.position = Vec3(1.0, 2.0, -30.0);
  ctrl::PidState pid;
  const auto out = ctrl::hover_pid(state, state.position, 0.0, gains, params,
                                   pid, 0.01);
  CHECK(out.input.thrust == Approx(params.mass * params.gravity).margin(1e-12));
  CHECK(out.input.torque.norm() == Approx(0.0).margin(1e-12));
}

TEST_CASE("hover step response settles fast without excessive overshoot") {
  const dyn::QuadParams params;
  const ctrl::ControlGains gains;
  const Vec3 start(0.0, 0.0, -40.0);
  const Vec3 setpoint(0.0, 0.0, -41.0);

  dyn::QuadState s;
  s.position = start;
  ctrl::PidState pid;
  const double control_dt = 0.01;
  double overshoot = 0.0;
  double settle_time = -1.0;
  for (int k = 0; k < 1200; ++k) {
    const auto out =
        ctrl::hover_pid(s, setpoint, 0.0, gains, params, pid, control_dt);
    for (int i = 0; i < 4; ++i) s = dyn::step(s, out.input, params);
    const double t = (k + 1) * control_dt;
    // Climbing means z decreases; rising past the setpoint is overshoot.
    overshoot = std::max(overshoot, setpoint.z() - s.position.z());
    if (std::abs(setpoint.z() - s.position.z()) > 0.05) {
      settle_time = -1.0;
    } else if (settle_time < 0.0) {
      settle_time = t;
    }
  }
  // Rise above the setpoint altitude counts as overshoot (z is down).
  CHECK(overshoot < 0.2);
  REQUIRE(settle_time > 0.0);
  CHECK(settle_time < 4.0);
  CHECK(std::abs(setpoint.z() - s.position.z()) < 0.05);
}

TEST_CASE("integral action removes a constant force disturbance") {
  dyn::QuadParams plant;
  plant.gravity = 9.86;  // 0.05 m/s^2 of unmodeled constant force
  const dyn::QuadParams model;
  const ctrl::ControlGains gains;

  dyn::QuadState s;
  s.position = Vec3(0.0, 0.0, -40.0);
  const Vec3 setpoint = s.position;
  ctrl::PidState pid;
  const double control_dt = 0.01;
  for (int k = 0; k < 1000; ++k) {
    const auto out =
        ctrl::hover_pid(s, setpoint, 0.0, gains, model, pid, control_dt);
    for (int i = 0; i < 4; ++i) s = dyn::step(s, out.input, plant);
  }
  CHECK((s.position - setpoint).norm() < 0.02);
}

TEST_CASE("far setpoints saturate cleanly and stay within actuator bounds") {
  const dyn::QuadParams params;
  const ctrl::ControlGains gains;
  dyn::QuadState state;
  state.position = Vec3(0.0, 0.0, -40.0);
  ctrl::PidState pid;
  const auto out = ctrl::hover_pid(state, Vec3(200.0, 0.0, -240.0), 0.0, gains,
                                   params, pid, 0.01);
  CHECK(out.input.thrust <= params.thrust_max);
  CHECK(out.input.torque.cwiseAbs().maxCoeff() <= params.torque_max);

  dyn::QuadState tilted;
  tilted.position = Vec3(0.0, 0.0, -40.0);
  tilted.rotation = rot_y(1.2);
  const auto out2 = ctrl::path_follow(tilted, straight_line(), 0.0, 0.0, gains,
                                      params);
  CHECK(out2.input.torque.cwiseAbs().maxCoeff() <= params.torque_max);
  CHECK(out2.torque_saturated);
}

TEST_CASE("lambda estimation recovers the pinhole pixel-per-meter ratio") {
  // Static point 64 m ahead of the camera; the vehicle climbs 1 m setpoints.
  // The vertical pinhole row is v = v0 + f * z_c / x_c, so the ratio of pixel
  // change to altitude change is exactly f / x_c = 5.
  const double focal = 320.0;
  const double v0_px = 240.0;
  const double x_c = 64.0;
  const double z_target = -77.0;

  ctrl::PbvsEstimator est;
  double z_w = -40.0;
  int collects = 0;
  while (!est.converged && collects < 20) {
    const double y_p = v0_px + focal * (z_target - z_w) / x_c;
    ctrl::pbvs_collect(est, y_p, v0_px, -z_w);
    if (!est.converged) z_w -= 1.0;
    ++collects;
  }
  REQUIRE(est.converged);
  CHECK(est.lambda == Approx(focal / x_c).epsilon(0.01));
  // First call only seeds the difference chain: five ratios, six collects.
  CHECK(collects == 6);
  CHECK(est.samples.size() == 5);
}

TEST_CASE("lambda samples with identical altitude are discarded") {
  ctrl::PbvsEstimator est;
  ctrl::pbvs_collect(est, 100.0, 240.0, 40.0);
  ctrl::pbvs_collect(est, 105.0, 240.0, 40.0);
  CHECK(est.samples.empty());
  ctrl::pbvs_collect(est, 105.0, 240.0, 41.0);
  CHECK(est.samples.size() == 1);
}

TEST_CASE("lambda estimation tolerates small pixel noise") {
  const double focal = 320.0;
  const double v0_px = 240.0;
  const double x_c = 64.0;
  const double z_target = -77.0;
  Rng rng(500);

  ctrl::PbvsEstimator est;
  double z_w = -40.0;
  int collects = 0;
  while (!est.converged && collects < 40) {
    const double y_p =
        v0_px + focal * (z_target - z_w) / x_c + rng.normal(0.0, 0.01);
    ctrl::pbvs_collect(est, y_p, v0_px, -z_w);
    if (!est.converged) z_w -= 1.0;
    ++collects;
  }
  REQUIRE(est.converged);
  CHECK(est.lambda == Approx(focal / x_c).epsilon(0.01));
}

TEST_CASE("pbvs command drives the pixel toward the image center") {
  ctrl::PbvsEstimator est;
  // Build convergence from five identical exact ratios: each 1 m of climb
  // moves the above-center pixel 5 px down toward the principal row.
  for (int i = 0; i <= 5; ++i) {
    ctrl::pbvs_collect(est, 200.0 + 5.0 * i, 240.0, 40.0 + i);
  }
  REQUIRE(est.converged);
  REQUIRE(est.lambda == Approx(5.0).margin(1e-12));

  CHECK(ctrl::pbvs_command(est, -50.0, 215.0, 240.0) == Approx(-55.0));
  CHECK(ctrl::pbvs_command(est, -50.0, 240.0, 240.0) == Approx(-50.0));
  // Target above the image center commands a climb (more negative z).
  CHECK(ctrl::pbvs_command(est, -50.0, 230.0, 240.0) < -50.0);

  ctrl::PbvsEstimator empty;
  CHECK_THROWS_AS(ctrl::pbvs_command(empty, -50.0, 230.0, 240.0),
                  std::logic_error);
}
