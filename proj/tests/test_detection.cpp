#include <catch2/catch_amalgamated.hpp>

#include <vantage/detection.hpp>

using namespace vantage;
using Catch::Approx;

namespace {

world::Scene single_object_scene(world::ObjectKind kind, const Vec3& base,
                                 double blade_angle = 0.0) {
  world::Scene scene;
  world::SceneObject obj;
  obj.kind = kind;
  obj.base = base;
  obj.facing_yaw = M_PI;
  obj.blade_angle = blade_angle;
  scene.objects.push_back(obj);
  return scene;
}

std::vector<detect::ConfidenceSample> sampled_confidence(
    double t_offset, double omega, int count, double dt, Rng* rng = nullptr,
    double sigma = 0.0) {
  std::vector<detect::ConfidenceSample> series;
  for (int i = 0; i < count; ++i) {
    const double t = i * dt;
    double c = detect::confidence_model(omega * (t - t_offset));
    if (rng) c += rng->normal(0.0, sigma);
    series.push_back({t, c});
  }
  return series;
}

}  // namespace

TEST_CASE("blade phase distance folds onto the three-fold symmetry") {
  const double third = 2.0 * M_PI / 3.0;
  REQUIRE(detect::blade_phase_distance(0.0) == Approx(0.0).margin(1e-12));
  REQUIRE(detect::blade_phase_distance(third) == Approx(0.0).margin(1e-12));
  REQUIRE(detect::blade_phase_distance(2.0 * third) ==
          Approx(0.0).margin(1e-12));
  REQUIRE(detect::blade_phase_distance(M_PI / 3.0) == Approx(M_PI / 3.0));
  REQUIRE(detect::blade_phase_distance(0.1) == Approx(0.1));
  REQUIRE(detect::blade_phase_distance(third - 0.1) == Approx(0.1));
  REQUIRE(detect::blade_phase_distance(-0.2) == Approx(0.2));
}

TEST_CASE("confidence model peaks at blade-up poses and decays between") {
  REQUIRE(detect::confidence_model(0.0) == Approx(0.974));
  REQUIRE(detect::confidence_model(2.0 * M_PI / 3.0) == Approx(0.974));
  REQUIRE(detect::confidence_model(-2.0 * M_PI / 3.0) == Approx(0.974));

  const double trough = detect::confidence_model(M_PI / 3.0);
  REQUIRE(trough > 0.90);
  REQUIRE(trough < 0.9001);

  double prev = detect::confidence_model(0.0);
  for (double beta = 0.02; beta <= M_PI / 3.0; beta += 0.02) {
    const double c = detect::confidence_model(beta);
    REQUIRE(c < prev);
    prev = c;
  }
}

TEST_CASE("noiseless detection boxes the rendered silhouette") {
  sense::CameraIntrinsics intr;
  const Vec3 cam_pos(0.0, 0.0, -40.0);
  const auto scene = single_object_scene(world::ObjectKind::WindTurbine,
                                         Vec3(100.0, 0.0, 0.0), 0.55);
  Rng rng(5);
  const auto boxes = detect::detect(scene, cam_pos, Mat3::Identity(), intr,
                                    sense::NoiseConfig::zero(), rng);
  REQUIRE(boxes.size() == 1);
  const auto& box = boxes[0];
  REQUIRE(box.kind == world::ObjectKind::WindTurbine);
  REQUIRE(box.confidence == Approx(detect::confidence_model(0.55)));

  // the vertex-projected box must circumscribe the rendered silhouette,
  // tightly (rasterization can only shrink it by a pixel per side)
  const auto frame = vision::render(scene, cam_pos, Mat3::Identity(), intr);
  double u_min = 1e9, u_max = -1e9, v_min = 1e9, v_max = -1e9;
  for (int v = 0; v < frame.height; ++v) {
    for (int u = 0; u < frame.width; ++u) {
      if (frame.at(u, v) != vision::kSilhouetteIntensity) continue;
      u_min = std::min(u_min, u + 0.5);
      u_max = std::max(u_max, u + 0.5);
      v_min = std::min(v_min, v + 0.5);
      v_max = std::max(v_max, v + 0.5);
    }
  }
  REQUIRE(box.u - box.width / 2.0 <= u_min + 1e-9);
  REQUIRE(box.u + box.width / 2.0 >= u_max - 1e-9);
  REQUIRE(box.v - box.height / 2.0 <= v_min + 1e-9);
  REQUIRE(box.v + box.height / 2.0 >= v_max - 1e-9);
  REQUIRE(box.u - box.width / 2.0 == Approx(u_min).margin(2.0));
  REQUIRE(box.u + box.width / 2.0 == Approx(u_max).margin(2.0));
  REQUIRE(box.v - box.height / 2.0 == Approx(v_min).margin(2.0));
  REQUIRE(box.v + box.height / 2.0 == Approx(v_max).margin(2.0));
}

TEST_CASE("towers report the peak confidence") {
  sense::CameraIntrinsics intr;
  const auto scene = single_object_scene(world::ObjectKind::ElectricTower,
                                         Vec3(60.0, 0.0, 0.0));
  Rng rng(5);
  const auto boxes =
      detect::detect(scene, Vec3(0.0, 0.0, -15.0), Mat3::Identity(), intr,
                     sense::NoiseConfig::zero(), rng);
  REQUIRE(boxes.size() == 1);
  REQUIRE(boxes[0].kind == world::ObjectKind::ElectricTower);
  REQUIRE(boxes[0].confidence == Approx(0.974));
}

TEST_CASE("objects behind the camera or too small are not detected") {
  sense::CameraIntrinsics intr;
  Rng rng(5);
  const auto behind = single_object_scene(world::ObjectKind::WindTurbine,
                                          Vec3(-50.0, 0.0, 0.0));
  REQUIRE(detect::detect(behind, Vec3::Zero(), Mat3::Identity(), intr,
                         sense::NoiseConfig::zero(), rng)
              .empty());

  const auto tiny = single_object_scene(world::ObjectKind::ElectricTower,
                                        Vec3(4000.0, 0.0, 0.0));
  REQUIRE(detect::detect(tiny, Vec3(0.0, 0.0, -15.0), Mat3::Identity(), intr,
                         sense::NoiseConfig::zero(), rng)
              .empty());
}

TEST_CASE("detection jitter follows the configured sigmas") {
  sense::CameraIntrinsics intr;
  const auto scene = single_object_scene(world::ObjectKind::WindTurbine,
                                         Vec3(100.0, 0.0, 0.0), M_PI / 3.0);
  sense::NoiseConfig noise;  // defaults: pixel 0.5 px, confidence 0.003
  Rng rng(99);
  const int n = 4000;
  double su = 0.0, suu = 0.0, sc = 0.0, scc = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto boxes =
        detect::detect(scene, Vec3(0.0, 0.0, -40.0), Mat3::Identity(), intr,
                       noise, rng);
    REQUIRE(boxes.size() == 1);
    su += boxes[0].u;
    suu += boxes[0].u * boxes[0].u;
    sc += boxes[0].confidence;
    scc += boxes[0].confidence * boxes[0].confidence;
  }
  const double std_u = std::sqrt(suu / n - (su / n) * (su / n));
  const double std_c = std::sqrt(scc / n - (sc / n) * (sc / n));
  REQUIRE(std_u == Approx(noise.pixel_sigma).epsilon(0.10));
  REQUIRE(std_c == Approx(noise.confidence_sigma).epsilon(0.10));
  REQUIRE(sc / n == Approx(detect::confidence_model(M_PI / 3.0)).margin(5e-4));
}

TEST_CASE("peak prediction nails phase and period on clean series") {
  const double omega = 2.0 * M_PI / 9.0;  // 3 s confidence period
  const double period = 2.0 * M_PI / 3.0 / omega;
  for (double t_offset : {0.3, 1.234, 2.77}) {
    const auto series = sampled_confidence(t_offset, omega, 160, 0.08);
    const double t_query = series.back().t;
    const auto result = detect::predict_time_to_peak(series, t_query);
    REQUIRE(result.ok());
    REQUIRE(result.value.period == Approx(period).epsilon(0.02));

    double dt_true = std::fmod(t_offset - t_query, period);
    if (dt_true <= 0.0) dt_true += period;
    CAPTURE(t_offset);
    REQUIRE(result.value.dt_next_peak == Approx(dt_true).margin(0.03));
  }
}

TEST_CASE("peak prediction stays within spec under measurement noise") {
  const double omega = 2.0 * M_PI / 9.0;
  const double period = 3.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const double t_offset = 0.4 + 0.26 * static_cast<double>(seed);
    const auto series =
        sampled_confidence(t_offset, omega, 160, 0.08, &rng, 0.003);
    const double t_query = series.back().t;
    const auto result = detect::predict_time_to_peak(series, t_query);
    REQUIRE(result.ok());

    double dt_true = std::fmod(t_offset - t_query, period);
    if (dt_true <= 0.0) dt_true += period;
    CAPTURE(seed);
    REQUIRE(std::abs(result.value.dt_next_peak - dt_true) < 0.08);
  }
}

TEST_CASE("peak prediction reports unusable histories") {
  const double omega = 2.0 * M_PI / 9.0;
  const auto short_series = sampled_confidence(0.5, omega, 10, 0.08);
  REQUIRE(detect::predict_time_to_peak(short_series, 1.0).error ==
          detect::PeakError::InsufficientHistory);

  std::vector<detect::ConfidenceSample> flat;
  for (int i = 0; i < 200; ++i) flat.push_back({i * 0.08, 0.9});
  REQUIRE(detect::predict_time_to_peak(flat, 16.0).error ==
          detect::PeakError::NoPeriodicity);

  Rng rng(3);
  std::vector<detect::ConfidenceSample> white;
  for (int i = 0; i < 200; ++i) {
    white.push_back({i * 0.08, rng.normal(0.9, 0.01)});
  }
  const auto result = detect::predict_time_to_peak(white, 16.0);
  REQUIRE(!result.ok());
}

TEST_CASE("blade tip kinematics in pixels") {
  const sense::PixelPoint hub{320.0, 200.0};
  auto tip0 = detect::blade_tip(hub, 80.0, 0.0);
  REQUIRE(tip0.u == Approx(320.0));
  REQUIRE(tip0.v == Approx(120.0));

  auto tip_right = detect::blade_tip(hub, 80.0, M_PI / 2.0);
  REQUIRE(tip_right.u == Approx(400.0));
  REQUIRE(tip_right.v == Approx(200.0).margin(1e-9));

  auto tip_down = detect::blade_tip(hub, 80.0, M_PI);
  REQUIRE(tip_down.u == Approx(320.0).margin(1e-9));
  REQUIRE(tip_down.v == Approx(280.0));

  auto tip_diag = detect::blade_tip(hub, 80.0, M_PI / 4.0);
  REQUIRE(tip_diag.u == Approx(320.0 + 80.0 * std::sqrt(0.5)));
  REQUIRE(tip_diag.v == Approx(200.0 - 80.0 * std::sqrt(0.5)));

  detect::BladeModel model;
  model.hub = hub;
  model.blade_len_px = 80.0;
  model.omega = 0.5;
  model.beta_ref = 0.0;
  model.t_ref = 10.0;
  const auto tip_t = detect::blade_tip(model, 10.0 + M_PI);
  REQUIRE(tip_t.u == Approx(400.0));
  REQUIRE(detect::blade_top_row(model) == Approx(120.0));
}

TEST_CASE("rotor model is recovered from rendered motion masks") {
  sense::CameraIntrinsics intr;
  const Vec3 cam_pos(0.0, 0.0, -40.0);
  world::Scene scene = single_object_scene(world::ObjectKind::WindTurbine,
                                           Vec3(100.0, 0.0, 0.0), 0.0);

  const double dt = 0.08;
  std::vector<vision::GrayFrame> masks;
  vision::GrayFrame prev = vision::render(scene, cam_pos, Mat3::Identity(),
                                          intr);
  for (int k = 1; k <= 100; ++k) {
    world::advance_scene(scene, dt);
    vision::GrayFrame cur =
        vision::render(scene, cam_pos, Mat3::Identity(), intr);
    cur.timestamp = scene.time;
    masks.push_back(vision::frame_difference(prev, cur));
    prev = cur;
  }

  const auto fit = detect::fit_blade_model(masks);
  REQUIRE(fit.ok);
  REQUIRE(fit.model.hub.u == Approx(320.0).margin(2.0));
  REQUIRE(fit.model.hub.v == Approx(200.064).margin(2.0));
  REQUIRE(fit.model.blade_len_px == Approx(80.0).epsilon(0.05));
  REQUIRE(fit.model.omega ==
          Approx(scene.objects[0].blade_omega).epsilon(0.03));

  // t_ref must coincide with a blade-up pose of the true rotor
  const double beta_at_ref =
      detect::blade_phase_distance(scene.objects[0].blade_omega *
                                   fit.model.t_ref);
  REQUIRE(beta_at_ref < 0.06);

  // and the predicted tip must touch the top of the swept disk there
  const auto tip = detect::blade_tip(fit.model, fit.model.t_ref);
  REQUIRE(tip.v == Approx(120.06).margin(4.0));
}

TEST_CASE("rotor fit reports unusable mask sets") {
  std::vector<vision::GrayFrame> few(3, vision::GrayFrame(64, 64));
  REQUIRE(!detect::fit_blade_model(few).ok);

  std::vector<vision::GrayFrame> empty(20, vision::GrayFrame(64, 64));
  REQUIRE(!detect::fit_blade_model(empty).ok);
}

namespace {

std::vector<detect::ConfidenceSample> live_confidence_history(
    world::Scene& scene, const Vec3& position, const Mat3& rotation,
    const sense::NoiseConfig& noise, Rng& rng, int frames,
    double dt = 0.08) {
  const sense::CameraIntrinsics intr;
  std::vector<detect::ConfidenceSample> history;
  for (int i = 0; i < frames; ++i) {
    const auto boxes = detect::detect(scene, position, rotation, intr, noise,
                                      rng);
    REQUIRE_FALSE(boxes.empty());
    history.push_back({scene.time, boxes.front().confidence});
    world::advance_scene(scene, dt);
  }
  return history;
}

}  // namespace

TEST_CASE("active detection re-captures the box near the confidence peak") {
  const sense::CameraIntrinsics intr;
  const auto noise = sense::NoiseConfig::zero();
  const Vec3 position(0.0, 0.0, -40.0);
  const Mat3 rotation = Mat3::Identity();
  Rng rng(42);

  world::Scene scene =
      single_object_scene(world::ObjectKind::WindTurbine, Vec3(90, 0, 0));
  scene.objects[0].blade_angle = 0.37;
  auto history =
      live_confidence_history(scene, position, rotation, noise, rng, 100);

  const auto result = detect::active_detect(scene, position, rotation, intr,
                                            noise, history, rng);
  REQUIRE(result.peak_used);
  REQUIRE(result.box.confidence >= 0.969);
  REQUIRE(result.box.kind == world::ObjectKind::WindTurbine);
  const double period = 3.0;
  REQUIRE(result.waited <= period + 0.08 + 1e-9);
}

TEST_CASE("active detection beats the worst-phase standard detection") {
  const sense::CameraIntrinsics intr;
  const auto noise = sense::NoiseConfig::zero();
  const Vec3 position(0.0, 0.0, -40.0);
  const Mat3 rotation = Mat3::Identity();
  Rng rng(7);

  const int frames = 100;
  const double dt = 0.08;
  world::Scene scene =
      single_object_scene(world::ObjectKind::WindTurbine, Vec3(90, 0, 0));
  const double omega = scene.objects[0].blade_omega;
  const double t_end = frames * dt;
  scene.objects[0].blade_angle =
      wrap_two_pi(M_PI / 3.0 - omega * t_end);
  auto history =
      live_confidence_history(scene, position, rotation, noise, rng, frames);

  const auto standard =
      detect::detect(scene, position, rotation, intr, noise, rng);
  REQUIRE(standard.front().confidence < 0.905);

  const auto active = detect::active_detect(scene, position, rotation, intr,
                                            noise, history, rng);
  REQUIRE(active.peak_used);
  REQUIRE(active.box.confidence >= 0.969);
}

TEST_CASE("active detection falls back to an immediate box for towers") {
  const sense::CameraIntrinsics intr;
  sense::NoiseConfig noise = sense::NoiseConfig::zero();
  noise.confidence_sigma = 0.003;
  const Vec3 position(0.0, 0.0, -20.0);
  const Mat3 rotation = Mat3::Identity();
  Rng rng(11);

  world::Scene scene =
      single_object_scene(world::ObjectKind::ElectricTower, Vec3(70, 0, 0));
  auto history =
      live_confidence_history(scene, position, rotation, noise, rng, 100);

  const auto result = detect::active_detect(scene, position, rotation, intr,
                                            noise, history, rng);
  REQUIRE_FALSE(result.peak_used);
  REQUIRE(result.waited == 0.0);
  REQUIRE(result.box.kind == world::ObjectKind::ElectricTower);
  REQUIRE(result.box.confidence > 0.9);
}

TEST_CASE("active detection clears the bar across seeds with noise") {
  const sense::CameraIntrinsics intr;
  sense::NoiseConfig noise = sense::NoiseConfig::zero();
  noise.confidence_sigma = 0.003;
  noise.pixel_sigma = 0.5;
  const Vec3 position(0.0, 0.0, -40.0);
  const Mat3 rotation = Mat3::Identity();

  int hits = 0;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    world::Scene scene =
        single_object_scene(world::ObjectKind::WindTurbine, Vec3(90, 0, 0));
    scene.objects[0].blade_angle = rng.uniform(0.0, 2.0 * M_PI);
    auto history =
        live_confidence_history(scene, position, rotation, noise, rng, 100);
    const auto result = detect::active_detect(scene, position, rotation, intr,
                                              noise, history, rng);
    if (result.peak_used && result.box.confidence >= 0.969) ++hits;
  }
  REQUIRE(hits >= 9);
}
