#pragma once
// Frame-to-frame target tracking. A track is seeded from a detection box:
// edge points inside the box are tracked with pyramidal LK, and the box
// itself is smoothed by a constant-velocity Kalman filter on
// (u, v, area, aspect) in the style of SORT. The mean of the surviving
// point set is the measurement handed to the localization filter; the
// filtered box is used for health checks and re-initialization.

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include <vantage/detection.hpp>
#include <vantage/raster_vision.hpp>

namespace vantage::track {

/// Tightest box around a point set. Needs at least two points spread in
/// both axes; otherwise there is no box to speak of.
inline std::optional<detect::BBox> bbox_from_points(
    const std::vector<Vec2>& points, world::ObjectKind kind) {
  if (points.size() < 2) return std::nullopt;
  double u_min = points[0].x(), u_max = points[0].x();
  double v_min = points[0].y(), v_max = points[0].y();
  for (const auto& p : points) {
    u_min = std::min(u_min, p.x());
    u_max = std::max(u_max, p.x());
    v_min = std::min(v_min, p.y());
    v_max = std::max(v_max, p.y());
  }
  if (u_max - u_min < 1e-9 || v_max - v_min < 1e-9) return std::nullopt;
  detect::BBox box;
  box.u = 0.5 * (u_min + u_max);
  box.v = 0.5 * (v_min + v_max);
  box.width = u_max - u_min;
  box.height = v_max - v_min;
  box.confidence = 1.0;
  box.kind = kind;
  return box;
}

/// Constant-velocity Kalman filter on box center, area and aspect ratio,
/// plus their rates. Area and ratio make scale changes part of the motion
/// model instead of direct width/height differencing.
class BoxFilter {
 public:
  using Vec8 = Eigen::Matrix<double, 8, 1>;
  using Mat8 = Eigen::Matrix<double, 8, 8>;
  using Vec4m = Eigen::Matrix<double, 4, 1>;

  BoxFilter() = default;

  explicit BoxFilter(const detect::BBox& box) { reset(box); }

  void reset(const detect::BBox& box) {
    x_.setZero();
    x_(0) = box.u;
    x_(1) = box.v;
    x_(2) = box.area();
    x_(3) = box.width / box.height;
    P_ = Mat8::Zero();
    P_.diagonal() << 10.0, 10.0, 100.0, 1e-2, 1e3, 1e3, 1e4, 1.0;
    initialized_ = true;
  }

  bool initialized() const { return initialized_; }

  void predict(double dt) {
    Mat8 F = Mat8::Identity();
    for (int i = 0; i < 4; ++i) F(i, i + 4) = dt;
    x_ = F * x_;
    x_(2) = std::max(x_(2), 1.0);
    x_(3) = std::max(x_(3), 1e-3);
    Mat8 Q = Mat8::Zero();
    Q.diagonal() << 1e-2, 1e-2, 1e-2, 1e-2, 1e-1, 1e-1, 1e-1, 1e-1;
    P_ = F * P_ * F.transpose() + Q * dt;
  }

  void update(const detect::BBox& box) {
    Eigen::Matrix<double, 4, 8> H = Eigen::Matrix<double, 4, 8>::Zero();
    H.block<4, 4>(0, 0).setIdentity();
    Eigen::Matrix4d R = Eigen::Matrix4d::Zero();
    R.diagonal() << 1.0, 1.0, 25.0, 1e-4;
    Vec4m z;
    z << box.u, box.v, box.area(), box.width / box.height;
    const Vec4m innovation = z - H * x_;
    const Eigen::Matrix4d S = H * P_ * H.transpose() + R;
    const Eigen::Matrix<double, 8, 4> K =
        P_ * H.transpose() * S.inverse();
    x_ += K * innovation;
    x_(2) = std::max(x_(2), 1.0);
    x_(3) = std::max(x_(3), 1e-3);
    P_ = (Mat8::Identity() - K * H) * P_;
  }

  detect::BBox box(world::ObjectKind kind) const {
    detect::BBox b;
    b.u = x_(0);
    b.v = x_(1);
    const double area = std::max(x_(2), 1.0);
    const double ratio = std::max(x_(3), 1e-3);
    b.width = std::sqrt(area * ratio);
    b.height = std::sqrt(area / ratio);
    b.confidence = 1.0;
    b.kind = kind;
    return b;
  }

  const Vec8& state() const { return x_; }

 private:
  Vec8 x_ = Vec8::Zero();
  Mat8 P_ = Mat8::Identity();
  bool initialized_ = false;
};

struct TrackerParams {
  int max_points = 300;            ///< edge points kept at initialization
  int min_points = 10;             ///< below this the track asks for re-init
  double canny_low = 40.0;
  double canny_high = 100.0;
  vision::LkParams lk;
};

struct TrackOutput {
  bool ok = false;            ///< at least min_points survived this frame
  bool needs_reinit = false;  ///< point set too thin, reseed from a detection
  int tracked_count = 0;
  sense::PixelPoint mean;     ///< mean of surviving tracked points
  detect::BBox filtered_box;  ///< Kalman-smoothed box
};

/// One tracked target. Owns the point set and the box filter.
class Tracker {
 public:
  explicit Tracker(const TrackerParams& params = {}) : params_(params) {}

  /// Seeds the point set from edges inside `box` and resets the box filter.
  /// Returns the number of points seeded.
  int init(const vision::GrayFrame& frame, const detect::BBox& box) {
    points_.clear();
    kind_ = box.kind;
    const auto edges =
        vision::canny(frame, box.to_rect(), params_.canny_low,
                      params_.canny_high);
    const std::size_t n = edges.points.size();
    if (n > 0) {
      const std::size_t stride =
          std::max<std::size_t>(1, (n + params_.max_points - 1) /
                                       params_.max_points);
      for (std::size_t i = 0; i < n; i += stride) {
        points_.push_back(edges.points[i].cast<double>() +
                          Vec2(0.5, 0.5));
      }
    }
    filter_.reset(box);
    return static_cast<int>(points_.size());
  }

  /// Advances the point set from `prev` to `cur` and folds the resulting
  /// box measurement into the filter. `dt` is the frame interval.
  TrackOutput step(const vision::GrayFrame& prev,
                   const vision::GrayFrame& cur, double dt) {
    TrackOutput out;
    if (!filter_.initialized()) {
      out.needs_reinit = true;
      return out;
    }
    filter_.predict(dt);

    const auto tracked = vision::lk_track(prev, cur, points_, params_.lk);
    std::vector<Vec2> survivors;
    survivors.reserve(tracked.size());
    for (const auto& tp : tracked) {
      if (tp.ok) survivors.push_back(tp.position);
    }
    points_ = survivors;

    out.tracked_count = static_cast<int>(survivors.size());
    if (out.tracked_count < params_.min_points) {
      out.needs_reinit = true;
      out.filtered_box = filter_.box(kind_);
      return out;
    }

    Vec2 mean = Vec2::Zero();
    for (const auto& p : survivors) mean += p;
    mean /= static_cast<double>(survivors.size());
    out.mean = sense::PixelPoint{mean.x(), mean.y()};

    if (auto box = bbox_from_points(survivors, kind_)) {
      filter_.update(*box);
    }
    out.filtered_box = filter_.box(kind_);
    out.ok = true;
    return out;
  }

  const std::vector<Vec2>& points() const { return points_; }
  const BoxFilter& filter() const { return filter_; }

 private:
  TrackerParams params_;
  std::vector<Vec2> points_;
  BoxFilter filter_;
  world::ObjectKind kind_ = world::ObjectKind::WindTurbine;
};

}  // namespace vantage::track
