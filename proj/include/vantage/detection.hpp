#pragma once
// Simulated object detector and its timing layer. detect() plays the role of
// a trained single-shot detector: it boxes each visible structure and, for
// turbines, reports a confidence that peaks periodically whenever a blade
// points straight up (the rotor silhouette then matches the detector's
// favorite pose). predict_time_to_peak() recovers that periodicity from a
// confidence history so a capture can be scheduled at the next peak, and
// fit_blade_model() recovers the rotor's image-space kinematics from motion
// masks.

#include <cmath>
#include <optional>
#include <vector>

#include <vantage/core.hpp>
#include <vantage/raster_vision.hpp>
#include <vantage/sensors.hpp>
#include <vantage/sim_world.hpp>

namespace vantage::detect {

/// Axis-aligned detection box in pixels, center + size.
struct BBox {
  double u = 0.0;       ///< px, center column
  double v = 0.0;       ///< px, center row
  double width = 0.0;   ///< px
  double height = 0.0;  ///< px
  double confidence = 0.0;
  world::ObjectKind kind = world::ObjectKind::WindTurbine;

  double area() const { return width * height; }

  vision::PixelRect to_rect() const {
    vision::PixelRect r;
    r.u0 = static_cast<int>(std::floor(u - width / 2.0));
    r.v0 = static_cast<int>(std::floor(v - height / 2.0));
    r.u1 = static_cast<int>(std::ceil(u + width / 2.0)) + 1;
    r.v1 = static_cast<int>(std::ceil(v + height / 2.0)) + 1;
    return r;
  }
};

/// Confidence response of the simulated detector as a function of blade
/// angle. Peaks of peak_value sit at every multiple of 2 pi / 3; between
/// them the response decays toward c_min with a Gaussian profile. c_max
/// bounds the reported value once measurement jitter is added.
struct ConfidenceModel {
  double c_min = 0.90;
  double c_max = 0.975;
  double peak_value = 0.974;
  double sharpness = 8.0;
};

/// Angular distance to the nearest blade-up pose (multiple of 2 pi / 3).
inline double blade_phase_distance(double blade_angle) {
  const double sym = 2.0 * M_PI / 3.0;
  const double m = std::fmod(std::abs(blade_angle), sym);
  return std::min(m, sym - m);
}

inline double confidence_model(double blade_angle,
                               const ConfidenceModel& model = {}) {
  const double d = blade_phase_distance(blade_angle);
  return model.c_min +
         (model.peak_value - model.c_min) * std::exp(-model.sharpness * d * d);
}

/// Boxes every structure currently visible from the camera pose. A structure
/// counts as visible when all its silhouette vertices are in front of the
/// near plane and the clamped box still spans at least 4 px on each side.
/// Box jitter and confidence jitter are drawn from `rng`.
inline std::vector<BBox> detect(const world::Scene& scene,
                                const Vec3& position, const Mat3& rotation,
                                const sense::CameraIntrinsics& intr,
                                const sense::NoiseConfig& noise, Rng& rng,
                                const ConfidenceModel& model = {}) {
  std::vector<BBox> boxes;
  for (const auto& obj : scene.objects) {
    double u_min = 1e18, u_max = -1e18, v_min = 1e18, v_max = -1e18;
    bool visible = true;
    for (const auto& poly : world::silhouette_polygons(obj)) {
      for (const Vec3& vertex : poly) {
        const Vec3 cam = sense::world_to_camera(vertex, position, rotation);
        if (cam.x() <= vision::kNearClipDepth) {
          visible = false;
          break;
        }
        const sense::PixelPoint px = sense::project(cam, intr);
        u_min = std::min(u_min, px.u);
        u_max = std::max(u_max, px.u);
        v_min = std::min(v_min, px.v);
        v_max = std::max(v_max, px.v);
      }
      if (!visible) break;
    }
    if (!visible) continue;
    u_min = std::max(u_min, 0.0);
    v_min = std::max(v_min, 0.0);
    u_max = std::min(u_max, static_cast<double>(intr.width));
    v_max = std::min(v_max, static_cast<double>(intr.height));
    if (u_max - u_min < 4.0 || v_max - v_min < 4.0) continue;

    BBox box;
    box.kind = obj.kind;
    box.u = 0.5 * (u_min + u_max) + rng.normal(0.0, noise.pixel_sigma);
    box.v = 0.5 * (v_min + v_max) + rng.normal(0.0, noise.pixel_sigma);
    box.width = std::max(2.0, (u_max - u_min) +
                                  rng.normal(0.0, noise.pixel_sigma));
    box.height = std::max(2.0, (v_max - v_min) +
                                   rng.normal(0.0, noise.pixel_sigma));
    const double base = obj.kind == world::ObjectKind::WindTurbine
                            ? confidence_model(obj.blade_angle, model)
                            : model.peak_value;
    box.confidence = std::clamp(
        base + rng.normal(0.0, noise.confidence_sigma), 0.0, model.c_max);
    boxes.push_back(box);
  }
  return boxes;
}

// ---------------------------------------------------------------------------
// Confidence periodicity
// ---------------------------------------------------------------------------

struct ConfidenceSample {
  double t = 0.0;
  double value = 0.0;
};

struct PeakPrediction {
  double period = 0.0;        ///< s
  double dt_next_peak = 0.0;  ///< s from the query time to the next peak
  double score = 0.0;         ///< normalized autocorrelation at the period
};

enum class PeakError { None, InsufficientHistory, NoPeriodicity };

struct PeakResult {
  PeakError error = PeakError::None;
  PeakPrediction value;
  bool ok() const { return error == PeakError::None; }
};

namespace detail {

/// Normalized autocorrelation peak of a uniformly sampled series. Returns
/// (lag in samples, score); lag 0 on failure.
inline std::pair<double, double> autocorr_period(const std::vector<double>& x,
                                                 int lag_min) {
  const int n = static_cast<int>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= std::max(n, 1);

  const int lag_max = n / 2;
  std::vector<double> score(static_cast<std::size_t>(lag_max) + 1, 0.0);
  for (int lag = lag_min; lag <= lag_max; ++lag) {
    double num = 0.0, den_a = 0.0, den_b = 0.0;
    for (int i = 0; i + lag < n; ++i) {
      const double a = x[i] - mean;
      const double b = x[i + lag] - mean;
      num += a * b;
      den_a += a * a;
      den_b += b * b;
    }
    const double den = std::sqrt(den_a * den_b);
    score[lag] = den > 1e-12 ? num / den : 0.0;
  }
  double best_score = 0.0;
  for (int lag = lag_min + 1; lag < lag_max; ++lag) {
    if (score[lag] >= score[lag - 1] && score[lag] > score[lag + 1]) {
      best_score = std::max(best_score, score[lag]);
    }
  }
  // integer multiples of the period score about as high as the period
  // itself, so take the shortest lag whose score is close to the best
  int best_lag = 0;
  for (int lag = lag_min + 1; lag < lag_max && best_lag == 0; ++lag) {
    if (score[lag] >= score[lag - 1] && score[lag] > score[lag + 1] &&
        score[lag] >= 0.9 * best_score && score[lag] > 0.0) {
      best_lag = lag;
    }
  }
  if (best_lag == 0) return {0.0, 0.0};

  // parabolic refinement around the winning lag
  const double y0 = score[best_lag - 1], y1 = score[best_lag],
               y2 = score[best_lag + 1];
  const double denom = y0 - 2.0 * y1 + y2;
  double shift = 0.0;
  if (std::abs(denom) > 1e-12) shift = 0.5 * (y0 - y2) / denom;
  shift = std::clamp(shift, -0.5, 0.5);
  return {best_lag + shift, best_score};
}

/// Sub-sample position of a local extremum via parabola through three points.
inline double parabolic_vertex(double y0, double y1, double y2) {
  const double denom = y0 - 2.0 * y1 + y2;
  if (std::abs(denom) < 1e-12) return 0.0;
  return std::clamp(0.5 * (y0 - y2) / denom, -0.5, 0.5);
}

/// Sum of squared residuals between the series and the detector response
/// with peaks at phase + k * period.
inline double template_sse(const std::vector<ConfidenceSample>& series,
                           const ConfidenceModel& model, double period,
                           double phase) {
  const double rate = (2.0 * M_PI / 3.0) / period;
  double sse = 0.0;
  for (const auto& s : series) {
    const double r = s.value - confidence_model(rate * (s.t - phase), model);
    sse += r * r;
  }
  return sse;
}

/// Golden-section minimization of f over [lo, hi].
template <typename F>
double golden_min(F f, double lo, double hi, int iterations = 40) {
  const double inv_phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iterations; ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

/// Recovers the periodicity of a confidence series and the time remaining
/// until the next peak, as of `t_query`. The series must be uniformly
/// sampled. Fails with InsufficientHistory when fewer than two estimated
/// periods are covered and with NoPeriodicity when the autocorrelation never
/// exceeds 0.5. Autocorrelation and detected maxima give the initial period
/// and phase; both are then refined by fitting the known detector response
/// to the whole series, which averages the jitter of every sample instead
/// of only the near-peak ones.
inline PeakResult predict_time_to_peak(
    const std::vector<ConfidenceSample>& series, double t_query,
    const ConfidenceModel& model = {}) {
  PeakResult result;
  const int n = static_cast<int>(series.size());
  if (n < 16) {
    result.error = PeakError::InsufficientHistory;
    return result;
  }
  const double dt = (series.back().t - series.front().t) / (n - 1);

  std::vector<double> x(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) x[i] = series[i].value;

  const auto [lag, score] = detail::autocorr_period(x, 4);
  if (lag <= 0.0 || score < 0.5) {
    result.error = PeakError::NoPeriodicity;
    return result;
  }
  const double period = lag * dt;
  if (series.back().t - series.front().t < 2.0 * period) {
    result.error = PeakError::InsufficientHistory;
    return result;
  }

  // locate sample-domain peaks and fit peak time = t0 + k * period by least
  // squares, which sharpens both the phase and the period
  double x_max = x[0], x_min = x[0];
  for (double v : x) {
    x_max = std::max(x_max, v);
    x_min = std::min(x_min, v);
  }
  const double floor_level = x_min + 0.6 * (x_max - x_min);
  std::vector<double> peak_times;
  for (int i = 1; i + 1 < n; ++i) {
    if (x[i] >= x[i - 1] && x[i] > x[i + 1] && x[i] >= floor_level) {
      const double shift = detail::parabolic_vertex(x[i - 1], x[i], x[i + 1]);
      peak_times.push_back(series[i].t + shift * dt);
    }
  }

  double period_fit = period;
  double phase_ref;
  if (peak_times.size() >= 2) {
    double sk = 0.0, st = 0.0, skk = 0.0, skt = 0.0;
    const double t0 = peak_times.front();
    for (double tp : peak_times) {
      const double k = std::round((tp - t0) / period);
      sk += k;
      st += tp;
      skk += k * k;
      skt += k * tp;
    }
    const double m = static_cast<double>(peak_times.size());
    const double denom = m * skk - sk * sk;
    if (std::abs(denom) > 1e-9) {
      const double slope = (m * skt - sk * st) / denom;
      if (slope > 0.5 * period && slope < 1.5 * period) period_fit = slope;
      phase_ref = (st - slope * sk) / m;
    } else {
      phase_ref = t0;
    }
  } else if (peak_times.size() == 1) {
    phase_ref = peak_times.front();
  } else {
    result.error = PeakError::NoPeriodicity;
    return result;
  }

  // anchor the phase near the middle of the series so period and phase
  // stay nearly independent during the alternating refinement
  const double t_mid = 0.5 * (series.front().t + series.back().t);
  phase_ref += std::round((t_mid - phase_ref) / period_fit) * period_fit;

  for (int round = 0; round < 2; ++round) {
    phase_ref = detail::golden_min(
        [&](double phi) {
          return detail::template_sse(series, model, period_fit, phi);
        },
        phase_ref - 0.2 * period_fit, phase_ref + 0.2 * period_fit);
    period_fit = detail::golden_min(
        [&](double p) {
          return detail::template_sse(series, model, p, phase_ref);
        },
        0.95 * period_fit, 1.05 * period_fit);
  }

  double dt_next = std::fmod(t_query - phase_ref, period_fit);
  if (dt_next < 0.0) dt_next += period_fit;
  dt_next = period_fit - dt_next;

  result.value.period = period_fit;
  result.value.dt_next_peak = dt_next;
  result.value.score = score;
  return result;
}

struct ActiveDetectResult {
  BBox box;
  double waited = 0.0;     ///< s of simulated idle time before the box
  bool peak_used = false;  ///< false when the immediate fallback fired
};

/// Re-captures a detection at the predicted confidence peak. The scene is
/// taken by value and the idle wait is simulated internally on the frame
/// cadence, as of the last history timestamp. Detections are collected from
/// one frame before the predicted peak to one frame after it and the most
/// confident one wins, so the added latency is bounded by dt_next_peak plus
/// one frame. When the history carries no periodicity (towers, static
/// scenes) the current frame's best detection is returned immediately.
inline ActiveDetectResult active_detect(
    world::Scene scene, const Vec3& position, const Mat3& rotation,
    const sense::CameraIntrinsics& intr, const sense::NoiseConfig& noise,
    const std::vector<ConfidenceSample>& history, Rng& rng,
    double frame_dt = 0.08, const ConfidenceModel& model = {}) {
  ActiveDetectResult result;
  const double t_now = history.empty() ? scene.time : history.back().t;

  const auto best_of = [](const std::vector<BBox>& boxes) {
    BBox best;
    for (const auto& b : boxes) {
      if (b.confidence > best.confidence) best = b;
    }
    return best;
  };

  const PeakResult peak = predict_time_to_peak(history, t_now, model);
  if (!peak.ok()) {
    result.box = best_of(detect(scene, position, rotation, intr, noise, rng,
                                model));
    return result;
  }

  const double t_peak = t_now + peak.value.dt_next_peak;
  double waited = 0.0;
  while (true) {
    if (t_now + waited >= t_peak - frame_dt) {
      const BBox box = best_of(detect(scene, position, rotation, intr, noise,
                                      rng, model));
      if (box.confidence > result.box.confidence) result.box = box;
    }
    if (t_now + waited > t_peak) break;
    advance_scene(scene, frame_dt);
    waited += frame_dt;
  }
  result.waited = waited;
  result.peak_used = true;
  return result;
}

// ---------------------------------------------------------------------------
// Rotor kinematics in the image plane
// ---------------------------------------------------------------------------

/// Image-space rotor model: the tracked blade's free end sits on a circle of
/// radius blade_len_px around the rotor center. Angle 0 points straight up
/// (pixel v decreasing).
struct BladeModel {
  sense::PixelPoint hub;      ///< px, rotor center
  double blade_len_px = 0.0;  ///< px
  double omega = 0.0;         ///< rad/s in the image plane
  double beta_ref = 0.0;      ///< rad, blade angle at t_ref
  double t_ref = 0.0;         ///< s
};

/// Blade free-end pixel position at angle beta.
inline sense::PixelPoint blade_tip(const sense::PixelPoint& hub,
                                   double blade_len_px, double beta) {
  sense::PixelPoint p;
  p.u = hub.u + blade_len_px * std::sin(beta);
  p.v = hub.v - blade_len_px * std::cos(beta);
  return p;
}

inline sense::PixelPoint blade_tip(const BladeModel& model, double t) {
  return blade_tip(model.hub, model.blade_len_px,
                   model.beta_ref + model.omega * (t - model.t_ref));
}

/// Pixel row of the highest point the blades ever reach.
inline double blade_top_row(const BladeModel& model) {
  return model.hub.v - model.blade_len_px;
}

struct BladeFitResult {
  bool ok = false;
  const char* error = "";
  BladeModel model;
};

/// Fits the rotor model from a sequence of timestamped motion masks taken
/// from a still camera. The accumulated swept region gives the rotor center
/// (its centroid, by symmetry) and blade length; the per-mask top row
/// oscillates with the blade symmetry period and provides rate and phase.
inline BladeFitResult fit_blade_model(
    const std::vector<vision::GrayFrame>& masks) {
  BladeFitResult result;
  if (masks.size() < 8) {
    result.error = "need at least 8 motion masks";
    return result;
  }

  double sum_u = 0.0, sum_v = 0.0;
  std::size_t count = 0;
  for (const auto& mask : masks) {
    for (int v = 0; v < mask.height; ++v) {
      for (int u = 0; u < mask.width; ++u) {
        if (mask.at(u, v)) {
          sum_u += u + 0.5;
          sum_v += v + 0.5;
          ++count;
        }
      }
    }
  }
  if (count < 100) {
    result.error = "motion masks are almost empty";
    return result;
  }
  const double hub_u = sum_u / count;
  const double hub_v = sum_v / count;

  double len_sq = 0.0;
  std::vector<double> top_row(masks.size());
  std::vector<bool> top_valid(masks.size(), false);
  for (std::size_t m = 0; m < masks.size(); ++m) {
    const auto& mask = masks[m];
    int pixels = 0;
    int top = mask.height;
    for (int v = 0; v < mask.height; ++v) {
      for (int u = 0; u < mask.width; ++u) {
        if (!mask.at(u, v)) continue;
        ++pixels;
        top = std::min(top, v);
        const double du = (u + 0.5) - hub_u;
        const double dv = (v + 0.5) - hub_v;
        len_sq = std::max(len_sq, du * du + dv * dv);
      }
    }
    if (pixels >= 30) {
      top_row[m] = top;
      top_valid[m] = true;
    }
  }

  std::vector<double> signal;
  std::vector<double> times;
  for (std::size_t m = 0; m < masks.size(); ++m) {
    if (top_valid[m]) {
      signal.push_back(top_row[m]);
      times.push_back(masks[m].timestamp);
    }
  }
  if (signal.size() < 8) {
    result.error = "too few masks with blade motion";
    return result;
  }
  const double dt = (times.back() - times.front()) /
                    static_cast<double>(signal.size() - 1);
  const auto [lag, score] = detail::autocorr_period(signal, 3);
  if (lag <= 0.0 || score < 0.5) {
    result.error = "no rotor periodicity in motion masks";
    return result;
  }
  const double symmetry_period = lag * dt;

  // phase: the top row bottoms out while a blade passes straight up. The
  // row is quantized, so each passage shows up as a flat run of near-minimal
  // samples whose midpoint is the passage time. Runs cut off by the ends of
  // the recording are lopsided, so interior runs win. Each mask spans the
  // interval before its timestamp, which puts the effective sample time
  // half an interval earlier.
  const int sn = static_cast<int>(signal.size());
  double floor_row = signal[0];
  for (double s : signal) floor_row = std::min(floor_row, s);
  floor_row += 1.5;

  int pick_lo = -1, pick_hi = -1;
  bool pick_interior = false;
  for (int i = 0; i < sn;) {
    if (signal[i] > floor_row) {
      ++i;
      continue;
    }
    int j = i;
    while (j + 1 < sn && signal[j + 1] <= floor_row) ++j;
    const bool interior = i > 0 && j < sn - 1;
    const bool longer = pick_lo < 0 || (j - i) > (pick_hi - pick_lo);
    if ((interior && !pick_interior) || (interior == pick_interior && longer)) {
      pick_lo = i;
      pick_hi = j;
      pick_interior = interior;
    }
    i = j + 1;
  }

  result.ok = true;
  result.model.hub = sense::PixelPoint{hub_u, hub_v};
  result.model.blade_len_px = std::sqrt(len_sq);
  result.model.omega = (2.0 * M_PI / 3.0) / symmetry_period;
  result.model.t_ref = 0.5 * (times[pick_lo] + times[pick_hi]) - 0.5 * dt;
  result.model.beta_ref = 0.0;
  return result;
}

}  // namespace vantage::detect
