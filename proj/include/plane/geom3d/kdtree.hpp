#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <queue>
#include <span>
#include <vector>

#include "plane/geom3d/point_cloud.hpp"

namespace plane::geom {

struct Neighbor {
  std::size_t index;
  double distance;
};

/// Exact nearest-neighbour index over a fixed point set. Ties in distance are
/// broken by lower point index. Small sets are scanned directly.
class KdTree {
 public:
  static constexpr std::size_t kBruteForceBelow = 64;
  static constexpr std::size_t kLeafSize = 12;

  explicit KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (points_.size() >= kBruteForceBelow) {
      nodes_.reserve(2 * points_.size() / kLeafSize + 2);
      build(0, points_.size());
    }
  }

  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

  /// k nearest points to `query`, ascending by (distance, index).
  std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const {
    require(k >= 1, "k must be at least 1");
    require(k <= points_.size(), "insufficient points");
    std::vector<Candidate> best;
    if (nodes_.empty()) {
      best.reserve(points_.size());
      for (std::size_t i = 0; i < points_.size(); ++i)
        best.push_back({(points_[i] - query).squaredNorm(), i});
      std::partial_sort(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(k), best.end());
      best.resize(k);
    } else {
      std::priority_queue<Candidate> heap;
      search_knn(0, query, k, heap);
      best.resize(heap.size());
      for (std::size_t i = best.size(); i-- > 0;) {
        best[i] = heap.top();
        heap.pop();
      }
    }
    std::vector<Neighbor> out;
    out.reserve(best.size());
    for (const auto& c : best) out.push_back({c.index, std::sqrt(c.d2)});
    return out;
  }

  /// Indices (ascending) of every point within `radius` of `query`.
  std::vector<std::size_t> radius_search(const Vec3& query, double radius) const {
    std::vector<std::size_t> out;
    const double r2 = radius * radius;
    if (nodes_.empty()) {
      for (std::size_t i = 0; i < points_.size(); ++i)
        if ((points_[i] - query).squaredNorm() <= r2) out.push_back(i);
    } else {
      search_radius(0, query, r2, out);
      std::sort(out.begin(), out.end());
    }
    return out;
  }

 private:
  struct Candidate {
    double d2;
    std::size_t index;
    bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
  };

  struct Node {
    std::size_t begin = 0, end = 0;  // range into order_ for leaves
    std::int64_t left = -1, right = -1;
    int axis = -1;
    double split = 0.0;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;
    Vec3 lo = points_[order_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
    const double split = points_[order_[mid]][axis];
    const auto left = static_cast<std::int64_t>(build(begin, mid));
    const auto right = static_cast<std::int64_t>(build(mid, end));
    Node& n = nodes_[id];
    n.axis = axis;
    n.split = split;
    n.left = left;
    n.right = right;
    return id;
  }

  // Left subtree coordinates are <= split, right subtree >= split, so the
  // plane distance bounds every point on the far side.
  void search_knn(std::size_t id, const Vec3& q, std::size_t k, std::priority_queue<Candidate>& heap) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        Candidate c{(points_[idx] - q).squaredNorm(), idx};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const auto near = static_cast<std::size_t>(diff < 0 ? n.left : n.right);
    const auto far = static_cast<std::size_t>(diff < 0 ? n.right : n.left);
    search_knn(near, q, k, heap);
    if (heap.size() < k || diff * diff <= heap.top().d2) search_knn(far, q, k, heap);
  }

  void search_radius(std::size_t id, const Vec3& q, double r2, std::vector<std::size_t>& out) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i)
        if ((points_[order_[i]] - q).squaredNorm() <= r2) out.push_back(order_[i]);
      return;
    }
    const double diff = q[n.axis] - n.split;
    const auto near = static_cast<std::size_t>(diff < 0 ? n.left : n.right);
    const auto far = static_cast<std::size_t>(diff < 0 ? n.right : n.left);
    search_radius(near, q, r2, out);
    if (diff * diff <= r2) search_radius(far, q, r2, out);
  }

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

inline std::vector<Neighbor> knn(const PointCloud& cloud, const Vec3& query, std::size_t k) {
  return KdTree(cloud.points).knn(query, k);
}

}  // namespace plane::geom
