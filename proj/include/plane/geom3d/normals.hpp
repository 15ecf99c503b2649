#pragma once

#include <Eigen/Eigenvalues>

#include <span>

#include "plane/geom3d/point_cloud.hpp"

namespace plane::geom {

/// Unit normal of a neighbourhood: the smallest-eigenvalue eigenvector of
/// its covariance, oriented away from `reference` (normally the centroid of
/// the full cloud). Throws "degenerate neighborhood" when the covariance has
/// rank < 2.
inline Vec3 estimate_normal(const std::vector<Vec3>& points, std::span<const std::size_t> neighborhood,
                            const Vec3& reference) {
  require(neighborhood.size() >= 3, "degenerate neighborhood");
  Vec3 mean = Vec3::Zero();
  for (auto i : neighborhood) mean += points[i];
  mean /= static_cast<double>(neighborhood.size());
  Mat3 cov = Mat3::Zero();
  for (auto i : neighborhood) {
    const Vec3 d = points[i] - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(neighborhood.size());
  Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
  const Vec3 ev = solver.eigenvalues();  // ascending
  if (!(ev[2] > 0.0) || ev[1] <= 1e-12 * ev[2]) throw Error("degenerate neighborhood");
  Vec3 n = solver.eigenvectors().col(0).normalized();
  const double side = n.dot(mean - reference);
  if (side < 0.0) {
    n = -n;
  } else if (side == 0.0) {
    int axis = 0;
    n.cwiseAbs().maxCoeff(&axis);
    if (n[axis] < 0.0) n = -n;
  }
  return n;
}

inline Vec3 estimate_normal(const PointCloud& cloud, std::span<const std::size_t> neighborhood) {
  return estimate_normal(cloud.points, neighborhood, centroid(cloud.points));
}

}  // namespace plane::geom
