#pragma once
// Full inspection mission against a simulated scene: detect the structure,
// time the detection to the rotor's confidence peak, approach in doubling
// legs, learn the pixel-per-meter ratio from 1 m climbs, align the camera
// axis with the structure top, convert the alignment into a height, seed a
// depth estimate from the height, and refine that depth with the
// moving-frame filter during a constant-duration flyby.
//
// The simulation runs three nested clocks: dynamics at 2.5 ms, control at
// 10 ms on noisy sensors, perception at 80 ms on rendered frames. All
// randomness flows from one seed through named stream forks, so a report is
// a pure function of (scenario, seed).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <vantage/control.hpp>
#include <vantage/core.hpp>
#include <vantage/detection.hpp>
#include <vantage/ekf_loc.hpp>
#include <vantage/planning.hpp>
#include <vantage/quad_dynamics.hpp>
#include <vantage/raster_vision.hpp>
#include <vantage/scenario.hpp>
#include <vantage/sensors.hpp>
#include <vantage/sim_world.hpp>
#include <vantage/tracking.hpp>

namespace vantage::mission {

enum class Phase {
  Detect,
  ActiveInference,
  PlanarApproach,
  Climb,
  LambdaEstimation,
  BladeAlign,
  HeightMeasure,
  DepthEstimate,
  TrajectoryTrack,
  Done,
  Failed,
};

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Detect: return "detect";
    case Phase::ActiveInference: return "active_inference";
    case Phase::PlanarApproach: return "planar_approach";
    case Phase::Climb: return "climb";
    case Phase::LambdaEstimation: return "lambda_estimation";
    case Phase::BladeAlign: return "blade_align";
    case Phase::HeightMeasure: return "height_measure";
    case Phase::DepthEstimate: return "depth_estimate";
    case Phase::TrajectoryTrack: return "trajectory_track";
    case Phase::Done: return "done";
    case Phase::Failed: return "failed";
  }
  return "unknown";
}

struct PhaseSpan {
  Phase phase = Phase::Detect;
  double t_begin = 0.0;  ///< s
  double t_end = 0.0;    ///< s
};

struct HeightEstimate {
  enum class Method { ContourAlign, BladeAlign };
  double object_height = 0.0;  ///< m above ground
  Method method = Method::ContourAlign;
  int samples = 0;  ///< hover measurements (tower) or motion masks (turbine)
};

struct DepthEstimate {
  double x_c_initial = 0.0;  ///< m, from the height and the reference box
  double x_c_refined = 0.0;  ///< m, filter depth at the end of the flyby
};

// ---------------------------------------------------------------------------
// Small pure helpers the phase machine is built from.

/// Relative yaw increment that turns the camera axis toward a detection.
inline double desired_yaw(const detect::BBox& box,
                          const sense::CameraIntrinsics& intr) {
  return std::atan((box.u - intr.cu) / intr.focal);
}

/// Next planar waypoint: 2^k meters straight ahead at the given heading.
inline Vec3 planar_approach_step(const Vec3& position, double yaw, int k) {
  const double dist = std::pow(2.0, k);
  return position + dist * Vec3(std::cos(yaw), std::sin(yaw), 0.0);
}

/// Fraction of the image the detection occupies, as a side-length ratio.
inline double proximity_ratio(const detect::BBox& box,
                              const sense::CameraIntrinsics& intr) {
  const double frame_area = static_cast<double>(intr.width) * intr.height;
  return std::sqrt(box.area() / frame_area);
}

/// Pinhole depth of a structure of known height filling `height_px` rows.
/// Boxes thinner than 4 px carry no usable depth and are rejected.
inline double depth_from_height(double object_height, double height_px,
                                const sense::CameraIntrinsics& intr) {
  if (height_px < 4.0) {
    throw std::domain_error("depth_from_height: box too small for depth");
  }
  if (object_height <= 0.0) {
    throw std::domain_error("depth_from_height: height must be positive");
  }
  return intr.focal * object_height / height_px;
}

inline double rmse(const std::vector<double>& truth,
                   const std::vector<double>& estimate) {
  if (truth.size() != estimate.size() || truth.empty()) {
    throw std::invalid_argument("rmse: series must match and be non-empty");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = estimate[i] - truth[i];
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(truth.size()));
}

// ---------------------------------------------------------------------------

struct TimedValue {
  double t = 0.0;
  double value = 0.0;
};

struct DepthSample {
  double t = 0.0;
  double estimate = 0.0;
  double truth = 0.0;
};

struct MissionReport {
  bool done = false;
  std::string failure_reason;  ///< empty on success
  world::ObjectKind target = world::ObjectKind::WindTurbine;

  HeightEstimate height;
  bool height_valid = false;
  double height_truth = 0.0;

  DepthEstimate depth;
  bool depth_valid = false;
  double depth_truth_initial = 0.0;  ///< m at the start of the flyby
  double depth_truth_final = 0.0;    ///< m at the end of the flyby

  double lambda = 0.0;           ///< px/m learned from the climbs
  double lambda_duration = 0.0;  ///< s spent learning it
  double active_confidence = 0.0;
  double align_time = 0.0;  ///< s from ratio convergence to |error| <= 2 px

  // Terminal alignment snapshot; the height estimate is
  // align_altitude - align_residual_px * align_depth / focal.
  double align_residual_px = 0.0;
  double align_altitude = 0.0;
  double align_depth = 0.0;

  std::vector<PhaseSpan> phases;
  std::vector<TimedValue> confidence_series;
  std::vector<TimedValue> pixel_error_series;
  std::vector<DepthSample> depth_series;

  double duration = 0.0;  ///< s of simulated time
  dyn::QuadState final_state;
};

inline std::string serialize_report(const MissionReport& rep) {
  std::ostringstream out;
  out << "status," << (rep.done ? "done" : "failed") << ','
      << rep.failure_reason << '\n';
  out << "target,"
      << (rep.target == world::ObjectKind::WindTurbine ? "wind_turbine"
                                                       : "electric_tower")
      << '\n';
  out << "height," << (rep.height_valid ? 1 : 0) << ','
      << format_number(rep.height.object_height) << ','
      << (rep.height.method == HeightEstimate::Method::BladeAlign
              ? "blade_align"
              : "contour_align")
      << ',' << rep.height.samples << ','
      << format_number(rep.height_truth) << '\n';
  out << "depth," << (rep.depth_valid ? 1 : 0) << ','
      << format_number(rep.depth.x_c_initial) << ','
      << format_number(rep.depth.x_c_refined) << ','
      << format_number(rep.depth_truth_initial) << ','
      << format_number(rep.depth_truth_final) << '\n';
  out << "lambda," << format_number(rep.lambda) << ','
      << format_number(rep.lambda_duration) << '\n';
  out << "align," << format_number(rep.align_time) << ','
      << format_number(rep.align_residual_px) << ','
      << format_number(rep.align_altitude) << ','
      << format_number(rep.align_depth) << '\n';
  out << "active_confidence," << format_number(rep.active_confidence) << '\n';
  out << "duration," << format_number(rep.duration) << '\n';
  for (const auto& span : rep.phases) {
    out << "phase," << phase_name(span.phase) << ','
        << format_number(span.t_begin) << ',' << format_number(span.t_end)
        << '\n';
  }
  for (const auto& s : rep.confidence_series) {
    out << "confidence," << format_number(s.t) << ','
        << format_number(s.value) << '\n';
  }
  for (const auto& s : rep.pixel_error_series) {
    out << "pixel_error," << format_number(s.t) << ','
        << format_number(s.value) << '\n';
  }
  for (const auto& s : rep.depth_series) {
    out << "depth_sample," << format_number(s.t) << ','
        << format_number(s.estimate) << ',' << format_number(s.truth) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

class MissionSim {
 public:
  MissionSim(const cfg::Scenario& scenario, std::uint64_t seed)
      : sc_(scenario),
        scene_(scenario.scene),
        rng_root_(seed),
        rng_sensors_(rng_root_.fork("sensors")),
        rng_detect_(rng_root_.fork("detect")),
        ekf_({}, scenario.camera) {
    quad_.position = sc_.start_position;
    quad_.rotation = rot_z(sc_.start_yaw);
    hover_setpoint_ = sc_.start_position;
    yaw_cmd_ = sc_.start_yaw;
    input_.thrust = dyn::hover_thrust(sc_.quad);
    const auto it = std::find_if(
        scene_.objects.begin(), scene_.objects.end(),
        [&](const world::SceneObject& o) { return o.kind == sc_.target_class; });
    target_ = it == scene_.objects.end() ? -1
                                         : static_cast<int>(it - scene_.objects.begin());
  }

  MissionReport run() {
    rep_ = MissionReport{};
    rep_.target = sc_.target_class;
    if (target_ < 0) {
      rep_.failure_reason = "scene has no object of the target class";
      enter_phase(Phase::Failed);
      finish();
      return rep_;
    }
    rep_.height_truth = world::height_truth(target());
    enter_phase(Phase::Detect);
    try {
      do_detect();
      if (turbine()) {
        enter_phase(Phase::ActiveInference);
        do_active_inference();
      }
      enter_phase(Phase::PlanarApproach);
      do_planar_approach();
      if (turbine()) {
        enter_phase(Phase::LambdaEstimation);
        do_lambda_estimation();
        enter_phase(Phase::BladeAlign);
        do_blade_align();
        enter_phase(Phase::HeightMeasure);
        do_height_turbine();
      } else {
        enter_phase(Phase::Climb);
        do_climb();
        enter_phase(Phase::HeightMeasure);
        do_height_tower();
      }
      enter_phase(Phase::DepthEstimate);
      do_depth_estimate();
      enter_phase(Phase::TrajectoryTrack);
      do_trajectory_track();
      enter_phase(Phase::Done);
      rep_.done = true;
    } catch (const Abort& abort) {
      enter_phase(Phase::Failed);
      rep_.failure_reason = abort.reason;
    }
    finish();
    return rep_;
  }

 private:
  struct Abort {
    std::string reason;
  };

  enum class CtrlMode { Hover, Path };

  static constexpr int kFrameSteps = 32;    ///< dynamics steps per frame
  static constexpr int kControlSteps = 4;   ///< dynamics steps per control tick
  static constexpr double kAlignTolPx = 2.0;
  static constexpr double kStopRatio = 1.0 / 3.0;
  // Towers are about 2.4x smaller than turbines, so the stop ratio scales
  // by the default height ratio to end the approach at a comparable range.
  static constexpr double kTowerStopScale = 31.88 / 77.48;
  static constexpr double kLambdaTimeout = 60.0;  ///< s
  static constexpr double kTrackDuration = 15.0;  ///< s
  static constexpr double kTrackStandoff = 10.0;  ///< m short of the plane

  const world::SceneObject& target() const {
    return scene_.objects[static_cast<std::size_t>(target_)];
  }
  bool turbine() const {
    return sc_.target_class == world::ObjectKind::WindTurbine;
  }
  double now() const { return scene_.time; }
  double accel_limit() const {
    return 0.3 * (sc_.quad.thrust_max / sc_.quad.mass - sc_.quad.gravity);
  }

  // -- core stepping ---------------------------------------------------------

  void tick() {
    if (step_ % kControlSteps == 0) {
      sensed_ = sense::sample_sensors(quad_, sc_.noise, rng_sensors_);
      if (dwell_accum_on_) {
        dwell_alt_sum_ += sensed_.altitude;
        dwell_roll_sum_ += sensed_.rpy.x();
        dwell_pitch_sum_ += sensed_.rpy.y();
        ++dwell_alt_n_;
      }
      dyn::QuadState nav;
      nav.position = sensed_.gps_position;
      nav.velocity = sensed_.gps_velocity;
      nav.rotation = rpy_to_rot(sensed_.rpy);
      nav.omega = sensed_.body_rates;
      const double dt_ctrl = kControlSteps * sc_.quad.dt;
      ctrl::ControlOutput out;
      switch (mode_) {
        case CtrlMode::Hover:
          out = ctrl::hover_pid(nav, hover_setpoint_, yaw_cmd_, sc_.gains,
                                sc_.quad, pid_, dt_ctrl);
          break;
        case CtrlMode::Path:
          out = ctrl::path_follow(nav, traj_, now(), yaw_cmd_, sc_.gains,
                                  sc_.quad);
          break;
      }
      input_ = out.input;
      if (ekf_predict_on_) {
        ekf_.predict(sensed_.body_rates, sense::body_velocity(sensed_),
                     dt_ctrl);
      }
    }
    if (step_ % kFrameSteps == 0) {
      vision::GrayFrame frame =
          vision::render(scene_, quad_.position, quad_.rotation, sc_.camera);
      if (frame_hook_) frame_hook_(frame);
      prev_frame_ = std::move(frame);
      have_prev_frame_ = true;
    }
    quad_ = dyn::step(quad_, input_, sc_.quad);
    world::advance_scene(scene_, sc_.quad.dt);
    ++step_;
    if (now() > kMissionTimeout) throw Abort{"mission-timeout"};
  }

  /// Advances until the predicate holds (checked every dynamics step).
  /// Returns false when the timeout elapsed first.
  bool wait_until(const std::function<bool()>& pred, double timeout) {
    const double deadline = now() + timeout;
    while (now() < deadline) {
      if (pred()) return true;
      tick();
    }
    return pred();
  }

  void settle_hover(double timeout = 2.0) {
    wait_until(
        [&] {
          return (sensed_.gps_position - hover_setpoint_).norm() < 0.12 &&
                 sensed_.gps_velocity.norm() < 0.12;
        },
        timeout);
  }

  /// Plans a rest-to-rest cubic from the current setpoint and flies it to
  /// the end, then re-enters hover at the destination.
  void fly_to(const Vec3& to, double v_cruise, bool settle = true) {
    plan::BoundaryConditions bc;
    bc.p0 = hover_setpoint_;
    bc.pf = to;
    const double duration = plan::choose_duration(bc, accel_limit(), v_cruise);
    traj_ = plan::plan_cubic(bc, now(), now() + duration);
    mode_ = CtrlMode::Path;
    wait_until([&] { return now() >= traj_.tf; }, duration + 1.0);
    hover_setpoint_ = to;
    pid_.integral.setZero();
    mode_ = CtrlMode::Hover;
    if (settle) settle_hover();
  }

  void enter_phase(Phase phase) {
    if (!rep_.phases.empty()) rep_.phases.back().t_end = now();
    rep_.phases.push_back(PhaseSpan{phase, now(), now()});
  }

  void finish() {
    if (!rep_.phases.empty()) rep_.phases.back().t_end = now();
    rep_.duration = now();
    rep_.final_state = quad_;
    frame_hook_ = nullptr;
  }

  // -- perception helpers ----------------------------------------------------

  std::optional<detect::BBox> detect_target() {
    const auto boxes = detect::detect(scene_, quad_.position, quad_.rotation,
                                      sc_.camera, sc_.noise, rng_detect_);
    std::optional<detect::BBox> best;
    for (const auto& box : boxes) {
      if (box.kind != sc_.target_class) continue;
      if (!best || box.confidence > best->confidence) best = box;
    }
    return best;
  }

  sense::PixelPoint level_now(const sense::PixelPoint& px) const {
    return sense::level_pixel(px, sensed_.rpy.x(), sensed_.rpy.y(), sc_.camera);
  }

  struct BoxStats {
    double u_lev = 0.0;
    double v_lev = 0.0;
    double width = 0.0;
    double height = 0.0;
    double ratio = 0.0;
    double confidence = 0.0;
    int n = 0;
  };

  /// Hovers in place and averages detections over the next `frames` frames.
  BoxStats measure_box(int frames, double timeout = 4.0) {
    BoxStats stats;
    frame_hook_ = [&](const vision::GrayFrame&) {
      const auto box = detect_target();
      if (!box) return;
      const auto lev = level_now({box->u, box->v});
      stats.u_lev += lev.u;
      stats.v_lev += lev.v;
      stats.width += box->width;
      stats.height += box->height;
      stats.ratio += proximity_ratio(*box, sc_.camera);
      stats.confidence += box->confidence;
      ++stats.n;
    };
    wait_until([&] { return stats.n >= frames; }, timeout);
    frame_hook_ = nullptr;
    if (stats.n == 0) throw Abort{"target-lost"};
    const double inv = 1.0 / stats.n;
    stats.u_lev *= inv;
    stats.v_lev *= inv;
    stats.width *= inv;
    stats.height *= inv;
    stats.ratio *= inv;
    stats.confidence *= inv;
    return stats;
  }

  struct DwellResult {
    std::vector<vision::GrayFrame> masks;
    double altitude = 0.0;    ///< m, mean over the dwell's control ticks
    double mean_roll = 0.0;   ///< rad, same averaging window
    double mean_pitch = 0.0;  ///< rad
  };

  /// Holds position while the rotor turns, so consecutive frames differ
  /// only by the blades, and collects the motion masks between them along
  /// with the dwell-mean altitude and attitude.
  DwellResult dwell(int frames) {
    DwellResult result;
    mode_ = CtrlMode::Hover;
    dwell_alt_sum_ = 0.0;
    dwell_roll_sum_ = 0.0;
    dwell_pitch_sum_ = 0.0;
    dwell_alt_n_ = 0;
    dwell_accum_on_ = true;
    bool have_ref = false;
    vision::GrayFrame ref;
    int seen = 0;
    frame_hook_ = [&](const vision::GrayFrame& frame) {
      ++seen;
      if (have_ref) {
        result.masks.push_back(vision::frame_difference(ref, frame));
      }
      ref = frame;
      have_ref = true;
      if (const auto box = detect_target()) {
        peak_box_height_ = std::max(peak_box_height_, box->height);
        if (have_blade_) log_tip_error(*box);
      }
    };
    wait_until([&] { return seen >= frames; },
               0.1 + 0.08 * (frames + 2));
    frame_hook_ = nullptr;
    dwell_accum_on_ = false;
    const int n = std::max(dwell_alt_n_, 1);
    result.altitude = dwell_alt_sum_ / n;
    result.mean_roll = dwell_roll_sum_ / n;
    result.mean_pitch = dwell_pitch_sum_ / n;
    return result;
  }

  struct HubFit {
    sense::PixelPoint hub;
    double phase_shift = 0.0;  ///< rad, correction to the model's blade angle
  };

  /// Rotor hub pixel from a dwell's motion masks: the common point of the
  /// blade-arm lines. Every mask sliver lies along an arm ray through the
  /// hub at an angle the blade kinematics give from the mask timestamp, so
  /// the hub solves a two-variable least-squares problem over all surviving
  /// pixels. The model's rate carries a small fit error that would drift the
  /// predicted angles over a mission, so a shared phase shift is searched per
  /// dwell by residual, which also settles the lateral sign convention (the
  /// mirrored pencil advances against time and misfits the series). Immune
  /// to the sampling speckle near the tips, to the mast swallowing the
  /// downward arm, and to the rotor phase the dwell starts at. Pixels go
  /// through a 1 px horizontal erosion first so that static-edge fringe
  /// columns from hover jitter die before they vote.
  HubFit hub_from_masks(const std::vector<vision::GrayFrame>& masks) const {
    struct ArmSet {
      double beta_mid = 0.0;
      std::vector<Vec2> pts;
    };
    std::vector<ArmSet> sets;
    sets.reserve(masks.size());
    double su = 0.0, sv = 0.0;
    long total = 0;
    for (const auto& mask : masks) {
      ArmSet set;
      set.beta_mid = blade_.beta_ref +
                     blade_.omega * (mask.timestamp - 0.04 - blade_.t_ref);
      for (int v = 0; v < mask.height; ++v) {
        for (int u = 1; u + 1 < mask.width; ++u) {
          if (mask.at(u, v) && mask.at(u - 1, v) && mask.at(u + 1, v)) {
            set.pts.emplace_back(u + 0.5, v + 0.5);
            su += u + 0.5;
            sv += v + 0.5;
          }
        }
      }
      total += static_cast<long>(set.pts.size());
      sets.push_back(std::move(set));
    }
    if (total < 300) throw Abort{"rotor-mask-degenerate"};
    const Vec2 seed(su / total, sv / total);

    const auto fit = [&](double sign, double delta, int iters) {
      Vec2 hub = seed;
      double ssr = 0.0;
      for (int iter = 0; iter < iters; ++iter) {
        Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
        Vec2 b = Vec2::Zero();
        ssr = 0.0;
        for (const auto& set : sets) {
          Vec2 rays[3];
          for (int j = 0; j < 3; ++j) {
            const double angle = set.beta_mid + delta + j * 2.0 * M_PI / 3.0;
            rays[j] = Vec2(-sign * std::sin(angle), -std::cos(angle));
          }
          for (const Vec2& p : set.pts) {
            const Vec2 d = p - hub;
            int arm = 0;
            double along = -std::numeric_limits<double>::max();
            for (int j = 0; j < 3; ++j) {
              const double proj = d.dot(rays[j]);
              if (proj > along) {
                along = proj;
                arm = j;
              }
            }
            const Vec2 normal(-rays[arm].y(), rays[arm].x());
            a += normal * normal.transpose();
            b += normal * normal.dot(p);
            const double r = normal.dot(d);
            ssr += r * r;
          }
        }
        hub = a.ldlt().solve(b);
      }
      return std::make_pair(hub, ssr);
    };

    // Coarse sweep over the symmetry sector for both sign conventions, then
    // a golden-section polish of the phase shift around the winning cell.
    const double sector = 2.0 * M_PI / 3.0;
    const double step = sector / 16.0;
    double best_sign = 1.0;
    double best_delta = 0.0;
    double best_ssr = std::numeric_limits<double>::max();
    for (const double sign : {1.0, -1.0}) {
      for (int k = 0; k < 16; ++k) {
        const double delta = -0.5 * sector + (k + 0.5) * step;
        const double ssr = fit(sign, delta, 2).second;
        if (ssr < best_ssr) {
          best_ssr = ssr;
          best_sign = sign;
          best_delta = delta;
        }
      }
    }
    double lo = best_delta - step;
    double hi = best_delta + step;
    const double gold = 0.5 * (std::sqrt(5.0) - 1.0);
    double m1 = hi - gold * (hi - lo);
    double m2 = lo + gold * (hi - lo);
    double f1 = fit(best_sign, m1, 3).second;
    double f2 = fit(best_sign, m2, 3).second;
    for (int it = 0; it < 12; ++it) {
      if (f1 < f2) {
        hi = m2;
        m2 = m1;
        f2 = f1;
        m1 = hi - gold * (hi - lo);
        f1 = fit(best_sign, m1, 3).second;
      } else {
        lo = m1;
        m1 = m2;
        f1 = f2;
        m2 = lo + gold * (hi - lo);
        f2 = fit(best_sign, m2, 3).second;
      }
    }
    const double delta = 0.5 * (lo + hi);
    const Vec2 hub = fit(best_sign, delta, 3).first;
    return {{hub.x(), hub.y()}, delta};
  }

  /// Tip-peak pixel error of a detection: the box top row, leveled, plus the
  /// phase correction that rewinds the highest blade to its upright pose.
  void log_tip_error(const detect::BBox& box) {
    const double top = box.v - box.height / 2.0;
    const auto lev = level_now({box.u, top});
    const double beta =
        blade_.beta_ref + blade_.omega * (now() - blade_.t_ref);
    const double d = detect::blade_phase_distance(beta);
    const double y_peak = lev.v + blade_.blade_len_px * (std::cos(d) - 1.0);
    const double err = y_peak - sc_.camera.cv;
    rep_.pixel_error_series.push_back({now(), err});
    if (!aligned_logged_ && std::abs(err) <= kAlignTolPx &&
        align_clock_started_) {
      rep_.align_time = now() - align_clock_t0_;
      aligned_logged_ = true;
    }
    last_tip_error_ = err;
  }

  // -- phases ----------------------------------------------------------------

  void do_detect() {
    mode_ = CtrlMode::Hover;
    bool found = false;
    frame_hook_ = [&](const vision::GrayFrame&) {
      const auto box = detect_target();
      if (!box) return;
      rep_.confidence_series.push_back({now(), box->confidence});
      found = true;
    };
    const bool ok = wait_until([&] { return found; }, 5.0);
    frame_hook_ = nullptr;
    if (!ok) throw Abort{"no-detection"};
  }

  void do_active_inference() {
    std::vector<detect::ConfidenceSample> history;
    double t_peak = -1.0;
    double best_conf = -1.0;
    bool window_done = false;
    frame_hook_ = [&](const vision::GrayFrame&) {
      const auto box = detect_target();
      if (!box) return;
      rep_.confidence_series.push_back({now(), box->confidence});
      history.push_back({now(), box->confidence});
      if (t_peak < 0.0) {
        const auto peak = detect::predict_time_to_peak(history, now());
        if (peak.ok()) t_peak = now() + peak.value.dt_next_peak;
        return;
      }
      if (now() >= t_peak - 0.08 - 1e-9) {
        best_conf = std::max(best_conf, box->confidence);
      }
      if (now() > t_peak + 1e-9) window_done = true;
    };
    for (int attempt = 0; attempt < 3; ++attempt) {
      if (!wait_until([&] { return t_peak >= 0.0; }, 12.0)) {
        frame_hook_ = nullptr;
        throw Abort{"no-periodicity"};
      }
      wait_until([&] { return window_done; },
                 t_peak - now() + 0.3);
      if (best_conf >= 0.969) break;
      // Unlucky jitter at the sampled frames; rearm for the next peak.
      t_peak = -1.0;
      window_done = false;
    }
    frame_hook_ = nullptr;
    if (best_conf < 0.0) throw Abort{"target-lost"};
    rep_.active_confidence = best_conf;
  }

  void do_planar_approach() {
    const double threshold =
        turbine() ? kStopRatio : kStopRatio * kTowerStopScale;
    for (int k = 0; k < 9; ++k) {
      BoxStats stats = measure_box(3);
      const detect::BBox pseudo{stats.u_lev, stats.v_lev, stats.width,
                                stats.height};
      yaw_cmd_ = wrap_pi(yaw_cmd_ + desired_yaw(pseudo, sc_.camera));
      wait_until(
          [&] {
            return std::abs(wrap_pi(sensed_.rpy.z() - yaw_cmd_)) < 0.01 &&
                   std::abs(sensed_.body_rates.z()) < 0.05;
          },
          2.0);
      if (stats.ratio >= threshold) return;
      const Vec3 to = planar_approach_step(hover_setpoint_, yaw_cmd_, k);
      fly_to(to, 3.0);
    }
    throw Abort{"approach-diverged"};
  }

  /// Leveled row of the highest motion across a mask series. Over a full
  /// symmetry period some mask catches a blade nearly upright, so the
  /// minimum is the tip's upright row; nothing static sits above the rotor
  /// outline, so hover-jitter fringes cannot reach it.
  double top_row_from_masks(const std::vector<vision::GrayFrame>& masks,
                            double roll, double pitch) const {
    double v_top = std::numeric_limits<double>::max();
    for (const auto& mask : masks) {
      for (int v = 0; v < mask.height; ++v) {
        bool hit = false;
        for (int u = 0; u < mask.width; ++u) {
          if (mask.at(u, v)) {
            const auto lev = sense::level_pixel({u + 0.5, v + 0.5}, roll,
                                                pitch, sc_.camera);
            v_top = std::min(v_top, lev.v);
            hit = true;
            break;
          }
        }
        if (hit) break;
      }
    }
    return v_top;
  }

  /// Leveled hub row and dwell altitude as one ratio sample. The fitted
  /// phase shift re-anchors the blade model so that rate error only ever
  /// acts across one inter-dwell gap, and consecutive anchors refine the
  /// rate itself.
  void collect_ratio(const DwellResult& d) {
    const HubFit hub = hub_from_masks(d.masks);
    blade_.beta_ref += hub.phase_shift;
    const double t_mid =
        0.5 * (d.masks.front().timestamp + d.masks.back().timestamp);
    if (have_anchor_ && t_mid > anchor_time_ + 1.0) {
      // Rate update that leaves the just-anchored phase at t_mid untouched.
      const double dw = hub.phase_shift / (t_mid - anchor_time_);
      blade_.omega += dw;
      blade_.beta_ref -= dw * (t_mid - blade_.t_ref);
    }
    anchor_time_ = t_mid;
    have_anchor_ = true;
    const auto lev =
        sense::level_pixel(hub.hub, d.mean_roll, d.mean_pitch, sc_.camera);
    ctrl::pbvs_collect(pbvs_, lev.v, sc_.camera.cv, d.altitude);
    std::fprintf(stderr,
                 "[dwell] alt=%.5f hub_u=%.4f hub_v=%.4f shift=%.5f "
                 "ratio=%.5f\n",
                 d.altitude, lev.u, lev.v, hub.phase_shift,
                 pbvs_.ratios.empty() ? 0.0 : pbvs_.ratios.back());
    last_hub_v_ = lev.v;
    last_dwell_alt_ = d.altitude;
  }

  void do_lambda_estimation() {
    const double t_start = now();
    pbvs_ = ctrl::PbvsEstimator{};
    // Long first dwell: the rotor fit's lag search needs the mask series to
    // span comfortably more than two symmetry periods.
    DwellResult first = dwell(85);
    const auto fit = detect::fit_blade_model(first.masks);
    if (!fit.ok) throw Abort{std::string("rotor-fit: ") + fit.error};
    blade_ = fit.model;
    have_blade_ = true;
    collect_ratio(first);
    // The fit's swept-region radius is fragile against stray static-edge
    // fringe pixels; the upright tip row from the same dwell is not, and
    // the hub row is already pinned, so rebuild the length from those.
    const double v_top = top_row_from_masks(first.masks, first.mean_roll,
                                            first.mean_pitch);
    blade_.blade_len_px = last_hub_v_ - (v_top - 0.5);
    first.masks.clear();
    while (!pbvs_.converged) {
      if (now() - t_start > kLambdaTimeout) throw Abort{"lambda-timeout"};
      fly_to(hover_setpoint_ + Vec3(0.0, 0.0, -1.0), 2.0, false);
      collect_ratio(dwell(21));
    }
    rep_.lambda = pbvs_.lambda;
    rep_.lambda_duration = now() - t_start;
    align_clock_t0_ = now();
    align_clock_started_ = true;
  }

  void do_blade_align() {
    for (int attempt = 0; attempt < 3; ++attempt) {
      const double y_tip = last_hub_v_ - blade_.blade_len_px;
      const double z_cmd =
          ctrl::pbvs_command(pbvs_, -last_dwell_alt_, y_tip, sc_.camera.cv);
      frame_hook_ = [&](const vision::GrayFrame&) {
        if (const auto box = detect_target()) log_tip_error(*box);
      };
      fly_to(Vec3(hover_setpoint_.x(), hover_setpoint_.y(), z_cmd), 8.0);
      // Verify over a second of frames before accepting the alignment.
      double err_sum = 0.0;
      int err_n = 0;
      frame_hook_ = [&](const vision::GrayFrame&) {
        if (const auto box = detect_target()) {
          log_tip_error(*box);
          err_sum += last_tip_error_;
          ++err_n;
        }
      };
      wait_until([&] { return err_n >= 13; }, 3.0);
      frame_hook_ = nullptr;
      if (err_n == 0) throw Abort{"target-lost"};
      const double mean_err = err_sum / err_n;
      std::fprintf(stderr,
                   "[align] attempt=%d z_cmd=%.4f y_tip=%.4f L=%.4f "
                   "lambda=%.5f mean_err=%.4f n=%d\n",
                   attempt, z_cmd, y_tip, blade_.blade_len_px, pbvs_.lambda,
                   mean_err, err_n);
      if (std::abs(mean_err) <= kAlignTolPx) return;
      // Residual ratio error; re-aim from the current view.
      last_hub_v_ = sc_.camera.cv + mean_err + blade_.blade_len_px;
      last_dwell_alt_ = sensed_.altitude;
    }
    throw Abort{"align-timeout"};
  }

  void do_height_turbine() {
    // One more mask dwell; the highest mask row over a full symmetry
    // period is the blade tip's upright pose. Rows cover [r, r+1), so the
    // half-pixel center offset cancels against the covered-center rule.
    mode_ = CtrlMode::Hover;
    dwell_alt_sum_ = 0.0;
    dwell_alt_n_ = 0;
    dwell_accum_on_ = true;
    bool have_ref = false;
    vision::GrayFrame ref;
    double v_top = 1e9;
    int masks = 0;
    int seen = 0;
    frame_hook_ = [&](const vision::GrayFrame& frame) {
      ++seen;
      if (have_ref) {
        const vision::GrayFrame mask = vision::frame_difference(ref, frame);
        [&] {
          for (int v = 0; v < mask.height; ++v) {
            for (int u = 0; u < mask.width; ++u) {
              if (mask.at(u, v)) {
                const auto lev = level_now({u + 0.5, v + 0.5});
                v_top = std::min(v_top, lev.v);
                return;
              }
            }
          }
        }();
        ++masks;
      }
      ref = frame;
      have_ref = true;
    };
    wait_until([&] { return seen >= 39; }, 3.5);
    frame_hook_ = nullptr;
    dwell_accum_on_ = false;
    if (masks < 8 || v_top > 1e8) throw Abort{"rotor-mask-degenerate"};

    const double altitude = dwell_alt_sum_ / std::max(dwell_alt_n_, 1);
    const double x_c = sc_.camera.focal / pbvs_.lambda;
    const double residual = (v_top - 0.5) - sc_.camera.cv;
    rep_.align_residual_px = residual;
    rep_.align_altitude = altitude;
    rep_.align_depth = x_c;
    rep_.height.object_height =
        altitude - residual * x_c / sc_.camera.focal;
    rep_.height.method = HeightEstimate::Method::BladeAlign;
    rep_.height.samples = masks;
    rep_.height_valid = true;
  }

  // Topmost near-axis contour point of the detection, leveled: canny runs
  // inside the box, the tenth of edge points closest to the principal
  // column is kept, and the highest of those wins.
  struct ContourStats {
    double v_top = 0.0;
    double altitude = 0.0;
    int n = 0;
  };

  ContourStats measure_contour(int frames, double timeout = 4.0) {
    ContourStats stats;
    int lost = 0;
    frame_hook_ = [&](const vision::GrayFrame& frame) {
      const auto box = detect_target();
      if (!box) {
        if (++lost >= 10) throw Abort{"contour-lost"};
        return;
      }
      const auto edges = vision::canny(frame, box->to_rect());
      if (edges.points.empty()) {
        if (++lost >= 10) throw Abort{"contour-lost"};
        return;
      }
      lost = 0;
      std::vector<Eigen::Vector2i> pts = edges.points;
      const auto off_axis = [&](const Eigen::Vector2i& p) {
        return std::abs(p.x() + 0.5 - sc_.camera.cu);
      };
      const std::size_t keep =
          std::max<std::size_t>(1, pts.size() / 10);
      std::nth_element(pts.begin(), pts.begin() + (keep - 1), pts.end(),
                       [&](const auto& a, const auto& b) {
                         return off_axis(a) < off_axis(b);
                       });
      Eigen::Vector2i best = pts[0];
      for (std::size_t i = 0; i < keep; ++i) {
        if (pts[i].y() < best.y()) best = pts[i];
      }
      const auto lev = level_now({best.x() + 0.5, best.y() + 0.5});
      stats.v_top += lev.v;
      stats.altitude += sensed_.altitude;
      ++stats.n;
    };
    wait_until([&] { return stats.n >= frames; }, timeout);
    frame_hook_ = nullptr;
    if (stats.n == 0) throw Abort{"contour-lost"};
    stats.v_top /= stats.n;
    stats.altitude /= stats.n;
    return stats;
  }

  void do_climb() {
    // Depth reference while the whole structure is still in frame.
    BoxStats ref = measure_box(5);
    ref_box_height_ = ref.height;
    double alt_below = -1.0, alt_above = -1.0;
    int k = 0;
    for (int iter = 0; iter < 40; ++iter) {
      const ContourStats m = measure_contour(5);
      const double err = m.v_top - sc_.camera.cv;
      ++climb_samples_;
      if (std::abs(err) <= kAlignTolPx) return;
      const double alt_cmd = -hover_setpoint_.z();
      double next;
      if (err < 0.0) {
        // Top is above center: we are below it.
        alt_below = std::max(alt_below, alt_cmd);
        next = alt_above < 0.0 ? alt_cmd + std::pow(2.0, k++)
                               : 0.5 * (alt_cmd + alt_above);
      } else {
        alt_above = alt_above < 0.0 ? alt_cmd : std::min(alt_above, alt_cmd);
        next = alt_below < 0.0 ? alt_cmd - std::pow(2.0, k++)
                               : 0.5 * (alt_below + alt_cmd);
      }
      next = std::max(next, 1.0);
      fly_to(Vec3(hover_setpoint_.x(), hover_setpoint_.y(), -next), 3.0);
    }
    throw Abort{"align-timeout"};
  }

  void do_height_tower() {
    const ContourStats m = measure_contour(8);
    ++climb_samples_;
    const double e = m.v_top - sc_.camera.cv;
    // Height and depth close on each other: H = alt - e x_c / f with
    // x_c = f H / h_ref has the closed form below.
    const double height = m.altitude / (1.0 + e / ref_box_height_);
    const double x_c = sc_.camera.focal * height / ref_box_height_;
    rep_.align_residual_px = e;
    rep_.align_altitude = m.altitude;
    rep_.align_depth = x_c;
    rep_.height.object_height = height;
    rep_.height.method = HeightEstimate::Method::ContourAlign;
    rep_.height.samples = climb_samples_;
    rep_.height_valid = true;
  }

  double depth_truth_now() const {
    const Vec3 normal(std::cos(target().facing_yaw),
                      std::sin(target().facing_yaw), 0.0);
    return std::abs(normal.dot(quad_.position - target().base));
  }

  void do_depth_estimate() {
    const double h_px = turbine() ? peak_box_height_ : ref_box_height_;
    try {
      rep_.depth.x_c_initial =
          depth_from_height(rep_.height.object_height, h_px, sc_.camera);
    } catch (const std::domain_error&) {
      throw Abort{"unreliable-depth"};
    }
    rep_.depth_valid = true;
  }

  void do_trajectory_track() {
    // Seed the tracker on the current view.
    bool seeded = false;
    sense::PixelPoint mean0;
    frame_hook_ = [&](const vision::GrayFrame& frame) {
      const auto box = detect_target();
      if (!box) return;
      if (tracker_.init(frame, *box) < 10) return;
      Vec2 m = Vec2::Zero();
      for (const auto& p : tracker_.points()) m += p;
      m /= static_cast<double>(tracker_.points().size());
      mean0 = {m.x(), m.y()};
      seeded = true;
    };
    if (!wait_until([&] { return seeded; }, 3.0)) {
      frame_hook_ = nullptr;
      throw Abort{"track-seed"};
    }
    frame_hook_ = nullptr;

    const double d0 = rep_.depth.x_c_initial;
    ekf_.init(Vec3(d0, sense::lateral_from_pixel(mean0.u, d0, sc_.camera),
                   sense::vertical_from_pixel(mean0.v, d0, sc_.camera)));
    rep_.depth_truth_initial = depth_truth_now();
    std::fprintf(stderr, "[fly] d0=%.4f truth0=%.4f mean0=(%.2f,%.2f)\n", d0,
                 rep_.depth_truth_initial, mean0.u, mean0.v);
    ekf_predict_on_ = true;

    bool updates_on = true;
    frame_hook_ = [&](const vision::GrayFrame& frame) {
      if (updates_on && have_prev_frame_) {
        const auto track = tracker_.step(prev_frame_, frame, 0.08);
        if (track.needs_reinit) {
          updates_on = false;  // feature left the frame; coast on prediction
          std::fprintf(stderr, "[fly] reinit at t=%.2f est=%.3f truth=%.3f\n",
                       now(), ekf_.state().x(), depth_truth_now());
        } else if (track.ok) {
          ekf_.update(track.mean);
        }
      }
      rep_.depth_series.push_back({now(), ekf_.state().x(), depth_truth_now()});
      if (rep_.depth_series.size() % 25 == 0)
        std::fprintf(stderr, "[fly] t=%.2f est=%.3f truth=%.3f up=%d\n", now(),
                     ekf_.state().x(), depth_truth_now(), updates_on ? 1 : 0);
    };
    const double dist = std::max(1.0, d0 - kTrackStandoff);
    const Vec3 dir(std::cos(yaw_cmd_), std::sin(yaw_cmd_), 0.0);
    fly_to(hover_setpoint_ + dist * dir, dist / kTrackDuration, false);
    frame_hook_ = nullptr;
    ekf_predict_on_ = false;
    rep_.depth.x_c_refined = ekf_.state().x();
    rep_.depth_truth_final = depth_truth_now();
  }

  static constexpr double kMissionTimeout = 240.0;  ///< s of simulated time

  cfg::Scenario sc_;
  world::Scene scene_;
  Rng rng_root_;
  Rng rng_sensors_;
  Rng rng_detect_;
  int target_ = -1;

  dyn::QuadState quad_;
  dyn::ControlInput input_;
  sense::SensorSample sensed_;
  long step_ = 0;

  CtrlMode mode_ = CtrlMode::Hover;
  Vec3 hover_setpoint_{0.0, 0.0, 0.0};
  double yaw_cmd_ = 0.0;
  ctrl::PidState pid_;
  plan::CubicTrajectory traj_;

  std::function<void(const vision::GrayFrame&)> frame_hook_;
  vision::GrayFrame prev_frame_;
  bool have_prev_frame_ = false;

  bool dwell_accum_on_ = false;
  double dwell_alt_sum_ = 0.0;
  double dwell_roll_sum_ = 0.0;
  double dwell_pitch_sum_ = 0.0;
  int dwell_alt_n_ = 0;

  ctrl::PbvsEstimator pbvs_;
  detect::BladeModel blade_;
  bool have_blade_ = false;
  double anchor_time_ = 0.0;
  bool have_anchor_ = false;
  double last_hub_v_ = 0.0;
  double last_dwell_alt_ = 0.0;
  double last_tip_error_ = 0.0;
  bool align_clock_started_ = false;
  double align_clock_t0_ = 0.0;
  bool aligned_logged_ = false;
  double peak_box_height_ = 0.0;
  double ref_box_height_ = 0.0;
  int climb_samples_ = 0;

  track::Tracker tracker_;
  ekf::PointLocalizer ekf_;
  bool ekf_predict_on_ = false;

  MissionReport rep_;
};

inline MissionReport run_mission(const cfg::Scenario& scenario,
                                 std::uint64_t seed) {
  return MissionSim(scenario, seed).run();
}

inline MissionReport run_mission(const cfg::Scenario& scenario) {
  return run_mission(scenario, scenario.seed);
}

}  // namespace vantage::mission
