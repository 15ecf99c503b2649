#pragma once

#include <Eigen/Geometry>

#include <numbers>

#include "plane/core/rng.hpp"
#include "plane/geom3d/point_cloud.hpp"

namespace plane::geom {

struct RotationAngles {
  double theta_x = 0.0;
  double theta_y = 0.0;
  double theta_z = 0.0;

  static RotationAngles random(Rng& rng) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    RotationAngles a;
    a.theta_x = rng.uniform(0.0, two_pi);
    a.theta_y = rng.uniform(0.0, two_pi);
    a.theta_z = rng.uniform(0.0, two_pi);
    return a;
  }
};

/// R = Rz * Ry * Rx, acting on column vectors.
inline Mat3 rotation_matrix(const RotationAngles& a) {
  const Mat3 rx = Eigen::AngleAxisd(a.theta_x, Vec3::UnitX()).toRotationMatrix();
  const Mat3 ry = Eigen::AngleAxisd(a.theta_y, Vec3::UnitY()).toRotationMatrix();
  const Mat3 rz = Eigen::AngleAxisd(a.theta_z, Vec3::UnitZ()).toRotationMatrix();
  return rz * ry * rx;
}

inline PointCloud rotate(const PointCloud& cloud, const Mat3& r) {
  PointCloud out = cloud;
  for (auto& p : out.points) p = r * p;
  return out;
}

}  // namespace plane::geom
