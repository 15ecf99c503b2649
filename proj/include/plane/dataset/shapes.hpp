#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "plane/core/rng.hpp"
#include "plane/geom3d/point_cloud.hpp"

namespace plane::dataset {

using geom::PointCloud;
using geom::Vec3;

enum class ShapeKind { sphere, box, cylinder, cone, torus };

inline const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> names{"sphere", "box", "cylinder", "cone", "torus"};
  return names;
}

inline ShapeKind parse_shape(const std::string& s) {
  if (s == "sphere") return ShapeKind::sphere;
  if (s == "box") return ShapeKind::box;
  if (s == "cylinder") return ShapeKind::cylinder;
  if (s == "cone") return ShapeKind::cone;
  if (s == "torus") return ShapeKind::torus;
  throw Error("unknown category: " + s);
}

inline std::string to_string(ShapeKind k) { return shape_names()[static_cast<std::size_t>(k)]; }

/// Fixed shape parameters. Every sampled surface is expressed in a frame where
/// the analytic surface centroid is the origin and the bounding radius is 1.
struct ShapeParams {
  static constexpr double box_hx = 1.0, box_hy = 0.7, box_hz = 0.5;
  static constexpr double cyl_r = 0.5, cyl_h = 1.6;
  static constexpr double cone_r = 0.6, cone_h = 1.4;
  static constexpr double torus_major = 0.8, torus_minor = 0.3;
};

namespace detail {

inline Vec3 disc_point(Rng& rng, double radius) {
  const double r = radius * std::sqrt(rng.uniform());
  const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return {r * std::cos(a), r * std::sin(a), 0.0};
}

inline Vec3 sample_box(Rng& rng) {
  using P = ShapeParams;
  const double axy = P::box_hx * P::box_hy, axz = P::box_hx * P::box_hz, ayz = P::box_hy * P::box_hz;
  const double u = rng.uniform() * 2.0 * (axy + axz + ayz);
  const double s = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0);
  if (u < 2.0 * axy) return {a * P::box_hx, b * P::box_hy, s * P::box_hz};
  if (u < 2.0 * (axy + axz)) return {a * P::box_hx, s * P::box_hy, b * P::box_hz};
  return {s * P::box_hx, a * P::box_hy, b * P::box_hz};
}

inline Vec3 sample_cylinder(Rng& rng) {
  using P = ShapeParams;
  const double side = 2.0 * std::numbers::pi * P::cyl_r * P::cyl_h;
  const double cap = std::numbers::pi * P::cyl_r * P::cyl_r;
  const double u = rng.uniform() * (side + 2.0 * cap);
  if (u < side) {
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return {P::cyl_r * std::cos(a), P::cyl_r * std::sin(a), rng.uniform(-0.5, 0.5) * P::cyl_h};
  }
  Vec3 p = disc_point(rng, P::cyl_r);
  p.z() = (u < side + cap ? -0.5 : 0.5) * P::cyl_h;
  return p;
}

// Apex at z = h, base disc at z = 0.
inline Vec3 sample_cone(Rng& rng) {
  using P = ShapeParams;
  const double slant = std::hypot(P::cone_r, P::cone_h);
  const double lateral = std::numbers::pi * P::cone_r * slant;
  const double base = std::numbers::pi * P::cone_r * P::cone_r;
  if (rng.uniform() * (lateral + base) < lateral) {
    const double f = std::sqrt(rng.uniform());  // distance from apex, as a fraction
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return {f * P::cone_r * std::cos(a), f * P::cone_r * std::sin(a), P::cone_h * (1.0 - f)};
  }
  return disc_point(rng, P::cone_r);
}

inline Vec3 sample_torus(Rng& rng) {
  using P = ShapeParams;
  const double big = P::torus_major, small = P::torus_minor;
  for (;;) {
    const double v = rng.uniform(0.0, 2.0 * std::numbers::pi);
    if (rng.uniform() * (big + small) > big + small * std::cos(v)) continue;
    const double u = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double w = big + small * std::cos(v);
    return {w * std::cos(u), w * std::sin(u), small * std::sin(v)};
  }
}

/// Analytic surface centroid and bounding radius about that centroid.
inline std::pair<Vec3, double> shape_frame(ShapeKind kind) {
  using P = ShapeParams;
  switch (kind) {
    case ShapeKind::sphere: return {Vec3::Zero(), 1.0};
    case ShapeKind::box:
      return {Vec3::Zero(), std::sqrt(P::box_hx * P::box_hx + P::box_hy * P::box_hy + P::box_hz * P::box_hz)};
    case ShapeKind::cylinder: return {Vec3::Zero(), std::hypot(P::cyl_r, 0.5 * P::cyl_h)};
    case ShapeKind::cone: {
      const double slant = std::hypot(P::cone_r, P::cone_h);
      const double lateral = std::numbers::pi * P::cone_r * slant;
      const double base = std::numbers::pi * P::cone_r * P::cone_r;
      // lateral surface centroid sits at h/3 above the base
      const double zc = lateral * (P::cone_h / 3.0) / (lateral + base);
      const double radius = std::max(P::cone_h - zc, std::hypot(P::cone_r, zc));
      return {Vec3(0.0, 0.0, zc), radius};
    }
    case ShapeKind::torus: return {Vec3::Zero(), P::torus_major + P::torus_minor};
  }
  return {Vec3::Zero(), 1.0};
}

}  // namespace detail

/// n points uniform over the shape surface plus N(0, jitter^2) noise,
/// expressed in the shape's normalized frame.
inline PointCloud synth_shape(ShapeKind kind, std::size_t n, double jitter, std::uint64_t seed) {
  require(n >= 64, "synth_shape: need at least 64 points");
  Rng rng(seed);
  const auto [center, radius] = detail::shape_frame(kind);
  PointCloud cloud;
  cloud.class_name = to_string(kind);
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 p;
    switch (kind) {
      case ShapeKind::sphere: {
        Vec3 g(rng.normal(), rng.normal(), rng.normal());
        while (g.squaredNorm() == 0.0) g = Vec3(rng.normal(), rng.normal(), rng.normal());
        p = g.normalized();
        break;
      }
      case ShapeKind::box: p = detail::sample_box(rng); break;
      case ShapeKind::cylinder: p = detail::sample_cylinder(rng); break;
      case ShapeKind::cone: p = detail::sample_cone(rng); break;
      case ShapeKind::torus: p = detail::sample_torus(rng); break;
    }
    p = (p - center) / radius;
    if (jitter > 0.0) p += jitter * Vec3(rng.normal(), rng.normal(), rng.normal());
    cloud.points.push_back(p);
  }
  return cloud;
}

inline PointCloud synth_shape(const std::string& kind, std::size_t n, double jitter, std::uint64_t seed) {
  return synth_shape(parse_shape(kind), n, jitter, seed);
}

}  // namespace plane::dataset
