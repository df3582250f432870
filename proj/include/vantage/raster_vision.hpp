#pragma once
// Classical vision over synthetic frames. The renderer scan-fills the world's
// silhouette polygons into 8-bit grayscale; on top of that live frame
// differencing for motion masks, a Canny edge extractor restricted to a pixel
// region, and a pyramidal Lucas-Kanade tracker. No external imaging library
// is used so every pixel is reproducible.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <vector>

#include <vantage/core.hpp>
#include <vantage/geometry.hpp>
#include <vantage/sensors.hpp>
#include <vantage/sim_world.hpp>

namespace vantage::vision {

constexpr std::uint8_t kBackgroundIntensity = 30;
constexpr std::uint8_t kSilhouetteIntensity = 200;
constexpr double kNearClipDepth = 0.1;  ///< m, camera-frame x

struct GrayFrame {
  int width = 0;
  int height = 0;
  double timestamp = 0.0;  ///< s, simulation clock
  std::vector<std::uint8_t> pixels;  ///< row-major, v * width + u

  GrayFrame() = default;
  GrayFrame(int w, int h, std::uint8_t fill = 0, double t = 0.0)
      : width(w), height(h), timestamp(t),
        pixels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t at(int u, int v) const {
    return pixels[static_cast<std::size_t>(v) * width + u];
  }
  std::uint8_t& at(int u, int v) {
    return pixels[static_cast<std::size_t>(v) * width + u];
  }
};

/// Half-open pixel rectangle [u0, u1) x [v0, v1).
struct PixelRect {
  int u0 = 0, v0 = 0, u1 = 0, v1 = 0;

  int width() const { return u1 - u0; }
  int height() const { return v1 - v0; }
  bool empty() const { return u1 <= u0 || v1 <= v0; }
  bool contains(int u, int v) const {
    return u >= u0 && u < u1 && v >= v0 && v < v1;
  }

  PixelRect clipped(int w, int h) const {
    PixelRect r;
    r.u0 = std::max(u0, 0);
    r.v0 = std::max(v0, 0);
    r.u1 = std::min(u1, w);
    r.v1 = std::min(v1, h);
    return r;
  }
};

namespace detail {

/// Fills one projected polygon. Pixel (u, v) is covered when its center
/// (u + 0.5, v + 0.5) lies inside the polygon (even-odd rule).
inline void fill_polygon(GrayFrame& frame, const std::vector<Vec2>& poly,
                         std::uint8_t value) {
  if (poly.size() < 3) return;
  double vmin = poly[0].y(), vmax = poly[0].y();
  for (const Vec2& p : poly) {
    vmin = std::min(vmin, p.y());
    vmax = std::max(vmax, p.y());
  }
  const int row_begin = std::max(0, static_cast<int>(std::ceil(vmin - 0.5)));
  const int row_end =
      std::min(frame.height - 1, static_cast<int>(std::floor(vmax - 0.5)));

  std::vector<double> crossings;
  for (int v = row_begin; v <= row_end; ++v) {
    const double y = v + 0.5;
    crossings.clear();
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Vec2& a = poly[i];
      const Vec2& b = poly[(i + 1) % poly.size()];
      // half-open span in y avoids double-counting shared vertices
      if ((a.y() <= y && y < b.y()) || (b.y() <= y && y < a.y())) {
        crossings.push_back(a.x() +
                            (y - a.y()) * (b.x() - a.x()) / (b.y() - a.y()));
      }
    }
    std::sort(crossings.begin(), crossings.end());
    for (std::size_t i = 0; i + 1 < crossings.size(); i += 2) {
      int u_begin = static_cast<int>(std::ceil(crossings[i] - 0.5));
      int u_end = static_cast<int>(std::floor(crossings[i + 1] - 0.5));
      u_begin = std::max(u_begin, 0);
      u_end = std::min(u_end, frame.width - 1);
      for (int u = u_begin; u <= u_end; ++u) frame.at(u, v) = value;
    }
  }
}

}  // namespace detail

/// Rasterizes world polygons as seen from a camera pose. Any polygon with a
/// vertex closer than the near clip depth is dropped whole.
inline GrayFrame render_polygons(const std::vector<world::Polygon>& polys,
                                 const Vec3& position, const Mat3& rotation,
                                 const sense::CameraIntrinsics& intr,
                                 double timestamp = 0.0) {
  GrayFrame frame(intr.width, intr.height, kBackgroundIntensity, timestamp);
  std::vector<Vec2> projected;
  for (const auto& poly : polys) {
    projected.clear();
    bool visible = true;
    for (const Vec3& vertex : poly) {
      const Vec3 cam = sense::world_to_camera(vertex, position, rotation);
      if (cam.x() <= kNearClipDepth) {
        visible = false;
        break;
      }
      const sense::PixelPoint px = sense::project(cam, intr);
      projected.emplace_back(px.u, px.v);
    }
    if (visible) detail::fill_polygon(frame, projected, kSilhouetteIntensity);
  }
  return frame;
}

/// Renders the whole scene from a camera pose.
inline GrayFrame render(const world::Scene& scene, const Vec3& position,
                        const Mat3& rotation,
                        const sense::CameraIntrinsics& intr) {
  std::vector<world::Polygon> polys;
  for (const auto& obj : scene.objects) {
    auto obj_polys = world::silhouette_polygons(obj);
    polys.insert(polys.end(), obj_polys.begin(), obj_polys.end());
  }
  return render_polygons(polys, position, rotation, intr, scene.time);
}

/// Binary motion mask: 255 where |a - b| >= threshold, else 0. Timestamp is
/// taken from the newer frame.
inline GrayFrame frame_difference(const GrayFrame& a, const GrayFrame& b,
                                  int threshold = 40) {
  if (a.width != b.width || a.height != b.height) {
    throw std::invalid_argument("frame size mismatch in frame_difference");
  }
  GrayFrame mask(a.width, a.height, 0,
                 std::max(a.timestamp, b.timestamp));
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
    const int d = std::abs(static_cast<int>(a.pixels[i]) -
                           static_cast<int>(b.pixels[i]));
    mask.pixels[i] = d >= threshold ? 255 : 0;
  }
  return mask;
}

/// Binary PGM (P5) dump, for inspecting runs offline.
inline void write_pgm(const GrayFrame& frame, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "P5\n" << frame.width << ' ' << frame.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(frame.pixels.data()),
            static_cast<std::streamsize>(frame.pixels.size()));
}

// ---------------------------------------------------------------------------
// Canny edge extraction inside a pixel region
// ---------------------------------------------------------------------------

struct EdgeSet {
  std::vector<Eigen::Vector2i> points;  ///< full-frame pixel coordinates
  PixelRect region;                     ///< area that was searched
};

namespace detail {

struct FloatPatch {
  int width = 0, height = 0;
  std::vector<float> data;

  float at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  int clamp_x(int x) const { return std::clamp(x, 0, width - 1); }
  int clamp_y(int y) const { return std::clamp(y, 0, height - 1); }
};

inline FloatPatch extract_patch(const GrayFrame& frame, const PixelRect& r) {
  FloatPatch p;
  p.width = r.width();
  p.height = r.height();
  p.data.resize(static_cast<std::size_t>(p.width) * p.height);
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) {
      p.at(x, y) = frame.at(r.u0 + x, r.v0 + y);
    }
  }
  return p;
}

/// Separable 5-tap Gaussian, sigma 1.4, replicated borders.
inline FloatPatch gaussian5(const FloatPatch& src) {
  static const float k[5] = {0.11023764f, 0.23691675f, 0.30569122f,
                             0.23691675f, 0.11023764f};
  FloatPatch tmp = src, out = src;
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      float acc = 0.0f;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * src.at(src.clamp_x(x + i), y);
      tmp.at(x, y) = acc;
    }
  }
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      float acc = 0.0f;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * tmp.at(x, src.clamp_y(y + i));
      out.at(x, y) = acc;
    }
  }
  return out;
}

}  // namespace detail

/// Canny edge points within `region` (clamped to the frame): Gaussian smooth,
/// Sobel gradients, non-maximum suppression along the gradient, then double
/// threshold with hysteresis (8-connected). Thresholds act on the raw Sobel
/// magnitude.
inline EdgeSet canny(const GrayFrame& frame, const PixelRect& region,
                     double low_threshold = 40.0,
                     double high_threshold = 100.0) {
  EdgeSet edges;
  edges.region = region.clipped(frame.width, frame.height);
  const PixelRect& r = edges.region;
  if (r.width() < 5 || r.height() < 5) return edges;

  const detail::FloatPatch smooth =
      detail::gaussian5(detail::extract_patch(frame, r));
  const int w = smooth.width, h = smooth.height;

  std::vector<float> mag(static_cast<std::size_t>(w) * h, 0.0f);
  std::vector<float> gx_v(mag.size(), 0.0f), gy_v(mag.size(), 0.0f);
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const float gx = (smooth.at(x + 1, y - 1) - smooth.at(x - 1, y - 1)) +
                       2.0f * (smooth.at(x + 1, y) - smooth.at(x - 1, y)) +
                       (smooth.at(x + 1, y + 1) - smooth.at(x - 1, y + 1));
      const float gy = (smooth.at(x - 1, y + 1) - smooth.at(x - 1, y - 1)) +
                       2.0f * (smooth.at(x, y + 1) - smooth.at(x, y - 1)) +
                       (smooth.at(x + 1, y + 1) - smooth.at(x + 1, y - 1));
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      gx_v[i] = gx;
      gy_v[i] = gy;
      mag[i] = std::sqrt(gx * gx + gy * gy);
    }
  }

  // non-maximum suppression with a strict tie-break on one side so plateau
  // edges thin to a single pixel
  std::vector<std::uint8_t> state(mag.size(), 0);  // 1 weak, 2 strong
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const float m = mag[i];
      if (m < low_threshold) continue;
      const float gx = gx_v[i], gy = gy_v[i];
      int dx, dy;
      const double angle = std::atan2(gy, gx);
      const double a = std::fmod(angle + M_PI, M_PI);  // direction mod pi
      if (a < M_PI / 8.0 || a >= 7.0 * M_PI / 8.0) {
        dx = 1; dy = 0;
      } else if (a < 3.0 * M_PI / 8.0) {
        dx = 1; dy = 1;
      } else if (a < 5.0 * M_PI / 8.0) {
        dx = 0; dy = 1;
      } else {
        dx = -1; dy = 1;
      }
      const float fwd = mag[static_cast<std::size_t>(y + dy) * w + (x + dx)];
      const float bwd = mag[static_cast<std::size_t>(y - dy) * w + (x - dx)];
      if (m >= bwd && m > fwd) {
        state[i] = m >= high_threshold ? 2 : 1;
      }
    }
  }

  // hysteresis: keep weak pixels 8-connected to a strong one
  std::vector<std::uint8_t> keep(mag.size(), 0);
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (state[static_cast<std::size_t>(y) * w + x] == 2) {
        keep[static_cast<std::size_t>(y) * w + x] = 1;
        queue.emplace_back(x, y);
      }
    }
  }
  while (!queue.empty()) {
    const auto [x, y] = queue.front();
    queue.pop_front();
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        const std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
        if (state[ni] != 0 && !keep[ni]) {
          keep[ni] = 1;
          queue.emplace_back(nx, ny);
        }
      }
    }
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (keep[static_cast<std::size_t>(y) * w + x]) {
        edges.points.emplace_back(r.u0 + x, r.v0 + y);
      }
    }
  }
  return edges;
}

// ---------------------------------------------------------------------------
// Pyramidal Lucas-Kanade point tracking
// ---------------------------------------------------------------------------

struct LkParams {
  int levels = 3;
  int window = 15;           ///< px, odd
  int max_iterations = 30;
  double epsilon = 0.01;     ///< px, update norm for convergence
  double min_eigenvalue = 3.0;   ///< per-pixel normalized structure floor
  double residual_tolerance = 12.0;  ///< mean |It| allowed after convergence
};

struct TrackedPoint {
  Vec2 position{0.0, 0.0};
  bool ok = false;
};

namespace detail {

struct Pyramid {
  std::vector<FloatPatch> levels;
};

inline FloatPatch downsample(const FloatPatch& src) {
  static const float k[5] = {0.0625f, 0.25f, 0.375f, 0.25f, 0.0625f};
  FloatPatch blurred = src, tmp = src;
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      float acc = 0.0f;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * src.at(src.clamp_x(x + i), y);
      tmp.at(x, y) = acc;
    }
  }
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      float acc = 0.0f;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * tmp.at(x, tmp.clamp_y(y + i));
      blurred.at(x, y) = acc;
    }
  }
  FloatPatch out;
  out.width = (src.width + 1) / 2;
  out.height = (src.height + 1) / 2;
  out.data.resize(static_cast<std::size_t>(out.width) * out.height);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      out.at(x, y) = blurred.at(std::min(2 * x, src.width - 1),
                                std::min(2 * y, src.height - 1));
    }
  }
  return out;
}

inline Pyramid build_pyramid(const GrayFrame& frame, int levels) {
  Pyramid p;
  PixelRect full{0, 0, frame.width, frame.height};
  p.levels.push_back(extract_patch(frame, full));
  for (int l = 1; l < levels; ++l) {
    p.levels.push_back(downsample(p.levels.back()));
  }
  return p;
}

inline bool in_interp_range(const FloatPatch& img, double x, double y) {
  return x >= 0.0 && y >= 0.0 && x <= img.width - 2.0 && y <= img.height - 2.0;
}

inline float bilinear(const FloatPatch& img, double x, double y) {
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const float ax = static_cast<float>(x - x0);
  const float ay = static_cast<float>(y - y0);
  const float v00 = img.at(x0, y0);
  const float v10 = img.at(x0 + 1, y0);
  const float v01 = img.at(x0, y0 + 1);
  const float v11 = img.at(x0 + 1, y0 + 1);
  return (1 - ax) * (1 - ay) * v00 + ax * (1 - ay) * v10 +
         (1 - ax) * ay * v01 + ax * ay * v11;
}

}  // namespace detail

/// Tracks points from `prev` into `cur`. Points fail (ok = false) when their
/// window leaves the image, lacks two-dimensional structure, or still looks
/// different after convergence (occlusion or deforming surfaces).
inline std::vector<TrackedPoint> lk_track(const GrayFrame& prev,
                                          const GrayFrame& cur,
                                          const std::vector<Vec2>& points,
                                          const LkParams& params = {}) {
  const int half = params.window / 2;
  const int area = params.window * params.window;
  const detail::Pyramid pyr_prev = detail::build_pyramid(prev, params.levels);
  const detail::Pyramid pyr_cur = detail::build_pyramid(cur, params.levels);

  std::vector<TrackedPoint> out(points.size());
  std::vector<float> iw(area), ixw(area), iyw(area);

  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    Vec2 flow(0.0, 0.0);  // expressed at the current level's scale
    bool ok = true;
    double residual = 0.0;

    for (int level = params.levels - 1; level >= 0 && ok; --level) {
      const detail::FloatPatch& I = pyr_prev.levels[level];
      const detail::FloatPatch& J = pyr_cur.levels[level];
      const double scale = 1.0 / static_cast<double>(1 << level);
      const Vec2 p = points[pi] * scale;
      flow *= 2.0;

      if (!detail::in_interp_range(I, p.x() - half - 1, p.y() - half - 1) ||
          !detail::in_interp_range(I, p.x() + half + 1, p.y() + half + 1)) {
        if (level == 0) ok = false;
        continue;
      }

      double gxx = 0.0, gxy = 0.0, gyy = 0.0;
      int idx = 0;
      for (int wy = -half; wy <= half; ++wy) {
        for (int wx = -half; wx <= half; ++wx, ++idx) {
          const double x = p.x() + wx;
          const double y = p.y() + wy;
          iw[idx] = detail::bilinear(I, x, y);
          ixw[idx] = 0.5f * (detail::bilinear(I, x + 1, y) -
                             detail::bilinear(I, x - 1, y));
          iyw[idx] = 0.5f * (detail::bilinear(I, x, y + 1) -
                             detail::bilinear(I, x, y - 1));
          gxx += ixw[idx] * ixw[idx];
          gxy += ixw[idx] * iyw[idx];
          gyy += iyw[idx] * iyw[idx];
        }
      }

      const double trace = gxx + gyy;
      const double det = gxx * gyy - gxy * gxy;
      const double eig_min = 0.5 * (trace - std::sqrt(std::max(
                                        trace * trace - 4.0 * det, 0.0)));
      if (eig_min / area < params.min_eigenvalue) {
        if (level == 0) ok = false;  // coarse levels just pass the guess down
        continue;
      }

      for (int iter = 0; iter < params.max_iterations; ++iter) {
        double bx = 0.0, by = 0.0;
        double res_acc = 0.0;
        bool inside = true;
        idx = 0;
        for (int wy = -half; wy <= half && inside; ++wy) {
          for (int wx = -half; wx <= half; ++wx, ++idx) {
            const double x = p.x() + flow.x() + wx;
            const double y = p.y() + flow.y() + wy;
            if (!detail::in_interp_range(J, x, y)) {
              inside = false;
              break;
            }
            const double it = detail::bilinear(J, x, y) - iw[idx];
            bx += it * ixw[idx];
            by += it * iyw[idx];
            res_acc += std::abs(it);
          }
        }
        if (!inside) {
          ok = false;
          break;
        }
        residual = res_acc / area;
        const double dx = -(gyy * bx - gxy * by) / det;
        const double dy = -(-gxy * bx + gxx * by) / det;
        flow.x() += dx;
        flow.y() += dy;
        if (std::hypot(dx, dy) < params.epsilon) break;
      }
    }

    if (ok && residual > params.residual_tolerance) ok = false;
    out[pi].ok = ok;
    out[pi].position = ok ? Vec2(points[pi] + flow) : points[pi];
  }
  return out;
}

}  // namespace vantage::vision
