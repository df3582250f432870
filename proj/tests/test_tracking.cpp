#include <catch2/catch_amalgamated.hpp>

#include <vantage/tracking.hpp>

using namespace vantage;
using Catch::Approx;

namespace {

world::Scene tower_scene() {
  world::Scene scene;
  world::SceneObject tower;
  tower.kind = world::ObjectKind::ElectricTower;
  tower.base = Vec3(60.0, 0.0, 0.0);
  tower.facing_yaw = M_PI;
  scene.objects.push_back(tower);
  return scene;
}

vision::GrayFrame shift_frame(const vision::GrayFrame& src, int du, int dv) {
  vision::GrayFrame out(src.width, src.height, vision::kBackgroundIntensity,
                        src.timestamp);
  for (int v = 0; v < src.height; ++v) {
    for (int u = 0; u < src.width; ++u) {
      const int su = u - du, sv = v - dv;
      if (su >= 0 && sv >= 0 && su < src.width && sv < src.height) {
        out.at(u, v) = src.at(su, sv);
      }
    }
  }
  return out;
}

detect::BBox make_box(double u, double v, double w, double h) {
  detect::BBox box;
  box.u = u;
  box.v = v;
  box.width = w;
  box.height = h;
  box.confidence = 1.0;
  box.kind = world::ObjectKind::ElectricTower;
  return box;
}

}  // namespace

TEST_CASE("bbox_from_points spans the point set exactly") {
  std::vector<Vec2> points = {Vec2(10.0, 20.0), Vec2(30.0, 60.0),
                              Vec2(15.0, 25.0)};
  const auto box =
      track::bbox_from_points(points, world::ObjectKind::ElectricTower);
  REQUIRE(box.has_value());
  REQUIRE(box->u == Approx(20.0));
  REQUIRE(box->v == Approx(40.0));
  REQUIRE(box->width == Approx(20.0));
  REQUIRE(box->height == Approx(40.0));

  REQUIRE(!track::bbox_from_points({Vec2(1.0, 2.0)},
                                   world::ObjectKind::ElectricTower)
               .has_value());
  REQUIRE(!track::bbox_from_points({Vec2(5.0, 2.0), Vec2(5.0, 9.0)},
                                   world::ObjectKind::ElectricTower)
               .has_value());
}

TEST_CASE("box filter settles on a stationary box") {
  track::BoxFilter filter(make_box(100.0, 150.0, 40.0, 20.0));
  for (int i = 0; i < 50; ++i) {
    filter.predict(0.08);
    filter.update(make_box(100.0, 150.0, 40.0, 20.0));
  }
  const auto box = filter.box(world::ObjectKind::ElectricTower);
  REQUIRE(box.u == Approx(100.0).margin(0.1));
  REQUIRE(box.v == Approx(150.0).margin(0.1));
  REQUIRE(box.width == Approx(40.0).margin(0.5));
  REQUIRE(box.height == Approx(20.0).margin(0.5));
  REQUIRE(std::abs(filter.state()(4)) < 0.5);
  REQUIRE(std::abs(filter.state()(5)) < 0.5);
}

TEST_CASE("box filter learns a constant pixel velocity") {
  const double dt = 0.08;
  const double du_per_frame = 2.0;
  track::BoxFilter filter(make_box(100.0, 150.0, 40.0, 20.0));
  double u = 100.0;
  for (int i = 0; i < 60; ++i) {
    u += du_per_frame;
    filter.predict(dt);
    filter.update(make_box(u, 150.0, 40.0, 20.0));
  }
  REQUIRE(filter.state()(4) == Approx(du_per_frame / dt).epsilon(0.1));

  // a pure prediction step must extrapolate the motion
  filter.predict(dt);
  REQUIRE(filter.state()(0) == Approx(u + du_per_frame).margin(1.0));
}

TEST_CASE("tracker follows a translating target") {
  sense::CameraIntrinsics intr;
  const auto base = vision::render(tower_scene(), Vec3(0.0, 0.0, -5.0),
                                   Mat3::Identity(), intr);

  track::Tracker tracker;
  const int seeded = tracker.init(base, make_box(320.0, 180.0, 90.0, 240.0));
  REQUIRE(seeded >= 40);

  auto point_mean = [&] {
    Vec2 mean = Vec2::Zero();
    for (const auto& p : tracker.points()) mean += p;
    return Vec2(mean / static_cast<double>(tracker.points().size()));
  };

  // points lost on the first step shift the survivor mean, so displacement
  // is measured from the first post-step state
  vision::GrayFrame prev = base;
  Vec2 mean_start;
  int count_start = 0;
  for (int k = 1; k <= 8; ++k) {
    const auto cur = shift_frame(base, 3 * k, 0);
    const auto out = tracker.step(prev, cur, 0.08);
    REQUIRE(out.ok);
    REQUIRE(!out.needs_reinit);
    REQUIRE(out.tracked_count >= 15);
    prev = cur;
    if (k == 1) {
      mean_start = point_mean();
      count_start = out.tracked_count;
    }
  }
  REQUIRE(tracker.points().size() >= count_start * 9 / 10);

  const Vec2 displacement = point_mean() - mean_start;
  REQUIRE(displacement.x() == Approx(21.0).margin(1.0));
  REQUIRE(displacement.y() == Approx(0.0).margin(1.0));

  const auto box = tracker.filter().box(world::ObjectKind::ElectricTower);
  REQUIRE(box.u == Approx(344.0).margin(8.0));
}

TEST_CASE("tracker asks for re-initialization when the target vanishes") {
  sense::CameraIntrinsics intr;
  const auto with_target = vision::render(tower_scene(), Vec3(0.0, 0.0, -5.0),
                                          Mat3::Identity(), intr);
  const vision::GrayFrame empty(intr.width, intr.height,
                                vision::kBackgroundIntensity);

  track::Tracker tracker;
  REQUIRE(tracker.init(with_target, make_box(320.0, 180.0, 90.0, 240.0)) >
          0);
  const auto out = tracker.step(with_target, empty, 0.08);
  REQUIRE(!out.ok);
  REQUIRE(out.needs_reinit);
}

TEST_CASE("uninitialized tracker reports itself") {
  track::Tracker tracker;
  vision::GrayFrame frame(64, 64, vision::kBackgroundIntensity);
  const auto out = tracker.step(frame, frame, 0.08);
  REQUIRE(out.needs_reinit);
}
