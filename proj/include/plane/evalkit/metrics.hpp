#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "plane/geom3d/kdtree.hpp"

namespace plane::eval {

namespace detail {

inline void check_inputs(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  require(scores.size() == labels.size(), "scores and labels differ in length");
}

/// Indices sorted by descending score, index breaks ties for determinism.
inline std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace detail

inline double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  detail::check_inputs(scores, labels);
  std::size_t pos = 0;
  for (auto l : labels) pos += l ? 1 : 0;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw Error("undefined AUROC: labels contain a single class");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the positive rank sum, so tied averages stay integral.
  std::uint64_t rank2 = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::size_t p = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) p += labels[idx[j++]] ? 1 : 0;
    rank2 += static_cast<std::uint64_t>(p) * (i + 1 + j);  // average rank (i+1+j)/2
    i = j;
  }
  const double u = static_cast<double>(rank2) / 2.0 - static_cast<double>(pos) * static_cast<double>(pos + 1) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

inline double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  detail::check_inputs(scores, labels);
  std::size_t total_pos = 0;
  for (auto l : labels) total_pos += l ? 1 : 0;
  if (total_pos == 0) throw Error("undefined AP: no positive labels");
  const auto idx = detail::descending(scores);
  double ap = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i, p = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) p += labels[idx[j++]] ? 1 : 0;
    tp += p;
    fp += (j - i) - p;
    if (p) ap += static_cast<double>(tp) / static_cast<double>(tp + fp) * static_cast<double>(p) / static_cast<double>(total_pos);
    i = j;
  }
  return ap;
}

inline double f1_max(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  detail::check_inputs(scores, labels);
  std::size_t total_pos = 0;
  for (auto l : labels) total_pos += l ? 1 : 0;
  if (total_pos == 0) throw Error("undefined F1: no positive labels");
  const auto idx = detail::descending(scores);
  double best = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      if (labels[idx[j]]) ++tp;
      else ++fp;
      ++j;
    }
    const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + (total_pos - tp));
    best = std::max(best, f1);
    i = j;
  }
  return best;
}

/// Median distance from each point to its k-th nearest other point.
inline double median_spacing(const geom::PointCloud& cloud, std::size_t k = 1) {
  require(k >= 1 && cloud.size() > k, "median_spacing needs more than k points");
  const geom::KdTree tree(cloud.points);
  std::vector<double> d(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) d[i] = tree.knn(cloud.points[i], k + 1)[k].distance;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double m = *mid;
  if (d.size() % 2 == 0) m = 0.5 * (m + *std::max_element(d.begin(), mid));
  return m;
}

/// Neighbour rank used for the default region radius. At rank 1 a randomly
/// sampled surface averages about three links per point and single defects
/// fall apart into fragments.
inline constexpr std::size_t kRegionNeighbor = 6;

/// Connected components of anomalous points linked within `radius`
/// (default: twice the median distance to the kRegionNeighbor-th neighbour).
/// Each component lists cloud indices ascending; components are ordered by first index.
inline std::vector<std::vector<std::size_t>> extract_regions(std::span<const std::uint8_t> mask,
                                                             const geom::PointCloud& cloud, double radius = 0.0) {
  require(mask.size() == cloud.size(), "extract_regions: mask size does not match cloud");
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) pos.push_back(i);
  if (pos.empty()) return {};
  if (radius <= 0.0) radius = 2.0 * median_spacing(cloud, std::min(kRegionNeighbor, cloud.size() - 1));
  std::vector<geom::Vec3> pts;
  for (auto i : pos) pts.push_back(cloud.points[i]);
  const geom::KdTree tree(pts);
  std::vector<int> comp(pos.size(), -1);
  std::vector<std::vector<std::size_t>> regions;
  for (std::size_t s = 0; s < pos.size(); ++s) {
    if (comp[s] >= 0) continue;
    const int id = static_cast<int>(regions.size());
    std::vector<std::size_t> members, stack{s};
    comp[s] = id;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      members.push_back(pos[u]);
      for (const auto& nb : tree.radius_search(pts[u], radius))
        if (comp[nb] < 0) {
          comp[nb] = id;
          stack.push_back(nb);
        }
    }
    std::sort(members.begin(), members.end());
    regions.push_back(std::move(members));
  }
  return regions;
}

/// Input to AU-PRO: one score map with its regions and normal-point mask.
struct ProSample {
  std::vector<double> scores;
  std::vector<std::uint8_t> mask;
  std::vector<std::vector<std::size_t>> regions;
};

inline ProSample make_pro_sample(std::vector<double> scores, std::vector<std::uint8_t> mask,
                                 const geom::PointCloud& cloud, double radius = 0.0) {
  require(scores.size() == mask.size(), "aupro: score map and mask differ in length");
  ProSample s;
  s.regions = extract_regions(mask, cloud, radius);
  s.scores = std::move(scores);
  s.mask = std::move(mask);
  return s;
}

/// Normalized area under the per-region-overlap curve up to `fpr_limit`.
inline double aupro(const std::vector<ProSample>& samples, double fpr_limit = 0.3) {
  require(fpr_limit > 0.0 && fpr_limit <= 1.0, "fpr_limit must lie in (0,1]");
  std::size_t n_regions = 0, n_neg = 0, total = 0;
  for (const auto& s : samples) {
    require(s.scores.size() == s.mask.size(), "aupro: score map and mask differ in length");
    n_regions += s.regions.size();
    for (auto m : s.mask) n_neg += m ? 0 : 1;
    total += s.scores.size();
  }
  if (n_regions == 0) throw Error("undefined AU-PRO: no anomalous regions");
  if (n_neg == 0) throw Error("undefined AU-PRO: no normal points");
  // Per pooled point: score and the PRO increment it contributes when detected.
  std::vector<double> score(total), gain(total, 0.0);
  std::vector<std::uint8_t> negative(total, 0);
  std::size_t off = 0;
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < s.scores.size(); ++i) {
      score[off + i] = s.scores[i];
      negative[off + i] = s.mask[i] ? 0 : 1;
    }
    for (const auto& r : s.regions)
      for (auto i : r) gain[off + i] = 1.0 / (static_cast<double>(r.size()) * static_cast<double>(n_regions));
    off += s.scores.size();
  }
  const auto idx = detail::descending(score);
  double area = 0.0, prev_fpr = 0.0, prev_pro = 0.0, pro = 0.0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && score[idx[j]] == score[idx[i]]) {
      pro += gain[idx[j]];
      fp += negative[idx[j]];
      ++j;
    }
    const double fpr = static_cast<double>(fp) / static_cast<double>(n_neg);
    if (fpr >= fpr_limit) {
      const double t = fpr > prev_fpr ? (fpr_limit - prev_fpr) / (fpr - prev_fpr) : 1.0;
      const double pro_at = prev_pro + t * (pro - prev_pro);
      area += 0.5 * (prev_pro + pro_at) * (fpr_limit - prev_fpr);
      return area / fpr_limit;
    }
    area += 0.5 * (prev_pro + pro) * (fpr - prev_fpr);
    prev_fpr = fpr;
    prev_pro = pro;
    i = j;
  }
  return area / fpr_limit;  // unreachable: the final group always reaches fpr 1
}

}  // namespace plane::eval
