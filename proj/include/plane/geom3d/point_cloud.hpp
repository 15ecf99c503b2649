#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "plane/core/error.hpp"

namespace plane::geom {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Ordered 3D points with optional per-point anomaly flags (1 = anomalous).
struct PointCloud {
  std::vector<Vec3> points;
  std::optional<std::vector<std::uint8_t>> labels;
  std::string class_name;

  std::size_t size() const { return points.size(); }
  bool has_labels() const { return labels.has_value(); }

  bool any_anomalous() const {
    if (!labels) return false;
    for (auto v : *labels)
      if (v) return true;
    return false;
  }

  /// Throws if any invariant is violated.
  void validate() const {
    require(!points.empty(), "point cloud is empty");
    for (const auto& p : points)
      require(std::isfinite(p.x()) && std::isfinite(p.y()) && std::isfinite(p.z()),
              "point cloud contains non-finite coordinates");
    if (labels) {
      require(labels->size() == points.size(), "label count does not match point count");
      for (auto v : *labels) require(v == 0 || v == 1, "labels must be 0 or 1");
    }
  }
};

inline Vec3 centroid(const std::vector<Vec3>& pts) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  return c / static_cast<double>(pts.size());
}

/// Centers at the centroid and scales so the farthest point has norm 1.
/// A cloud whose points all coincide is only centered.
inline PointCloud normalize_cloud(const PointCloud& cloud) {
  require(!cloud.points.empty(), "cannot normalize an empty cloud");
  PointCloud out = cloud;
  const Vec3 c = centroid(cloud.points);
  double max_norm = 0.0;
  for (auto& p : out.points) {
    p -= c;
    max_norm = std::max(max_norm, p.norm());
  }
  if (max_norm > 0.0)
    for (auto& p : out.points) p /= max_norm;
  return out;
}

}  // namespace plane::geom
