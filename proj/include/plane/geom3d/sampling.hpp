#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "plane/core/rng.hpp"
#include "plane/geom3d/point_cloud.hpp"

namespace plane::geom {

/// Greedy farthest-point sampling. The first index is a seeded uniform
/// draw; every later pick maximizes the distance to the chosen set, ties
/// going to the lower index. Returns indices in selection order.
inline std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t g,
                                                      std::uint64_t seed) {
  const std::size_t n = cloud.size();
  require(g >= 1 && g <= n, "farthest_point_sample: need 1 <= g <= N");
  Rng rng(seed);
  std::vector<std::size_t> chosen;
  chosen.reserve(g);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::size_t current = static_cast<std::size_t>(rng.index(n));
  for (std::size_t step = 0; step < g; ++step) {
    chosen.push_back(current);
    min_d2[current] = -1.0;
    const Vec3& c = cloud.points[current];
    std::size_t best = 0;
    double best_d2 = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (min_d2[i] >= 0.0) min_d2[i] = std::min(min_d2[i], (cloud.points[i] - c).squaredNorm());
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    current = best;
  }
  return chosen;
}

/// Random subset of n points (kept in original order) when N >= n.
/// When N < n every original point is kept and n - N extra copies are
/// drawn with replacement. Labels travel with their points.
inline PointCloud random_downsample(const PointCloud& cloud, std::size_t n, std::uint64_t seed) {
  require(n >= 1, "random_downsample: n must be >= 1");
  const std::size_t total = cloud.size();
  Rng rng(seed);
  std::vector<std::size_t> pick;
  if (total >= n) {
    std::vector<std::size_t> perm(total);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.index(total - i));
      std::swap(perm[i], perm[j]);
    }
    pick.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(pick.begin(), pick.end());
  } else {
    pick.resize(total);
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    while (pick.size() < n) pick.push_back(static_cast<std::size_t>(rng.index(total)));
  }
  PointCloud out;
  out.class_name = cloud.class_name;
  out.points.reserve(n);
  for (auto i : pick) out.points.push_back(cloud.points[i]);
  if (cloud.labels) {
    out.labels.emplace();
    out.labels->reserve(n);
    for (auto i : pick) out.labels->push_back((*cloud.labels)[i]);
  }
  return out;
}

}  // namespace plane::geom
