#pragma once
// Synthetic inspection world. Structures are flat silhouettes standing in a
// vertical plane on the z = 0 ground: a wind turbine (tapered mast plus a
// three-blade rotor spinning in the facing plane) and an electric pylon
// (trapezoid body with three cross-arms). Geometry is emitted as world-space
// polygons; the renderer turns them into frames.

#include <algorithm>
#include <vector>

#include <vantage/geometry.hpp>

namespace vantage::world {

enum class ObjectKind { WindTurbine, ElectricTower };

/// One structure in the scene. The silhouette lives in the vertical plane
/// through `base` whose outward normal heading is `facing_yaw`; lateral
/// extent runs along t = (-sin yaw, cos yaw, 0). Blade fields are ignored
/// for towers, tower_height for turbines.
struct SceneObject {
  ObjectKind kind = ObjectKind::WindTurbine;
  Vec3 base{0.0, 0.0, 0.0};               ///< ground attachment, z = 0
  double facing_yaw = 0.0;                ///< rad
  double hub_height = 52.48;              ///< m, rotor center above ground
  double blade_length = 25.0;             ///< m
  double blade_omega = 2.0 * M_PI / 9.0;  ///< rad/s
  double blade_angle = 0.0;               ///< rad, 0 = one blade straight up
  double tower_height = 31.88;            ///< m
};

struct Scene {
  std::vector<SceneObject> objects;
  double time = 0.0;  ///< s
};

using Polygon = std::vector<Vec3>;

/// Lateral in-plane unit vector of an object.
inline Vec3 lateral_axis(const SceneObject& obj) {
  return Vec3(-std::sin(obj.facing_yaw), std::cos(obj.facing_yaw), 0.0);
}

/// Maps in-plane coordinates (s lateral, h height above ground) to world.
inline Vec3 plane_point(const SceneObject& obj, double s, double h) {
  return obj.base + s * lateral_axis(obj) + Vec3(0.0, 0.0, -h);
}

/// Ground-truth total height of the structure.
inline double height_truth(const SceneObject& obj) {
  return obj.kind == ObjectKind::WindTurbine
             ? obj.hub_height + obj.blade_length
             : obj.tower_height;
}

/// Advances simulated time; turbine rotors integrate their blade angle,
/// wrapped to [0, 2 pi).
inline void advance_scene(Scene& scene, double dt) {
  scene.time += dt;
  for (auto& obj : scene.objects) {
    if (obj.kind == ObjectKind::WindTurbine) {
      obj.blade_angle = wrap_two_pi(obj.blade_angle + obj.blade_omega * dt);
    }
  }
}

namespace detail {

constexpr double kMastBaseHalf = 1.5;
constexpr double kMastTopHalf = 0.8;
constexpr double kBladeRootHalf = 0.7;
constexpr double kBladeTipHalf = 0.25;
constexpr double kPylonBaseHalf = 4.0;
constexpr double kPylonTopHalf = 0.8;
constexpr double kArmHalfThickness = 0.45;

/// One blade as an in-plane quad from the hub out to the tip. dir is the
/// in-plane unit vector of the blade axis, n its in-plane normal.
inline Polygon blade_quad(const SceneObject& obj, double angle) {
  const double ds = std::sin(angle);
  const double dh = std::cos(angle);  // 0 rad points straight up
  const double ns = dh;
  const double nh = -ds;
  const double hub = obj.hub_height;
  const double len = obj.blade_length;
  Polygon p;
  p.push_back(plane_point(obj, -kBladeRootHalf * ns, hub - kBladeRootHalf * nh));
  p.push_back(plane_point(obj, kBladeRootHalf * ns, hub + kBladeRootHalf * nh));
  p.push_back(plane_point(obj, len * ds + kBladeTipHalf * ns,
                          hub + len * dh + kBladeTipHalf * nh));
  p.push_back(plane_point(obj, len * ds - kBladeTipHalf * ns,
                          hub + len * dh - kBladeTipHalf * nh));
  return p;
}

}  // namespace detail

/// World-space silhouette polygons of an object at its current state.
inline std::vector<Polygon> silhouette_polygons(const SceneObject& obj) {
  std::vector<Polygon> polys;
  if (obj.kind == ObjectKind::WindTurbine) {
    polys.push_back({plane_point(obj, -detail::kMastBaseHalf, 0.0),
                     plane_point(obj, detail::kMastBaseHalf, 0.0),
                     plane_point(obj, detail::kMastTopHalf, obj.hub_height),
                     plane_point(obj, -detail::kMastTopHalf, obj.hub_height)});
    for (int k = 0; k < 3; ++k) {
      polys.push_back(
          detail::blade_quad(obj, obj.blade_angle + k * 2.0 * M_PI / 3.0));
    }
  } else {
    const double h = obj.tower_height;
    polys.push_back({plane_point(obj, -detail::kPylonBaseHalf, 0.0),
                     plane_point(obj, detail::kPylonBaseHalf, 0.0),
                     plane_point(obj, detail::kPylonTopHalf, h),
                     plane_point(obj, -detail::kPylonTopHalf, h)});
    const double arm_height[3] = {0.55 * h, 0.72 * h, 0.89 * h};
    const double arm_half_span[3] = {4.5, 3.75, 3.0};
    for (int i = 0; i < 3; ++i) {
      const double hh = arm_height[i];
      const double hs = arm_half_span[i];
      polys.push_back(
          {plane_point(obj, -hs, hh - detail::kArmHalfThickness),
           plane_point(obj, hs, hh - detail::kArmHalfThickness),
           plane_point(obj, hs, hh + detail::kArmHalfThickness),
           plane_point(obj, -hs, hh + detail::kArmHalfThickness)});
    }
  }
  return polys;
}

/// Highest point of the structure right now. For turbines this is the
/// highest blade tip, which only reaches hub + blade length when a blade
/// points straight up (blade_angle at a multiple of 2 pi / 3).
inline Vec3 object_top_vertex(const SceneObject& obj) {
  if (obj.kind == ObjectKind::ElectricTower) {
    return plane_point(obj, 0.0, obj.tower_height);
  }
  Vec3 best = plane_point(obj, 0.0, obj.hub_height);
  for (int k = 0; k < 3; ++k) {
    const double angle = obj.blade_angle + k * 2.0 * M_PI / 3.0;
    const Vec3 tip =
        plane_point(obj, obj.blade_length * std::sin(angle),
                    obj.hub_height + obj.blade_length * std::cos(angle));
    if (tip.z() < best.z()) best = tip;
  }
  return best;
}

}  // namespace vantage::world
