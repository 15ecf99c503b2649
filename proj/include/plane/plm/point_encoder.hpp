#pragma once

#include <algorithm>
#include <bit>
#include <cstring>
#include <numeric>
#include <vector>

#include <Eigen/Eigenvalues>

#include "plane/geom3d/kdtree.hpp"
#include "plane/geom3d/sampling.hpp"
#include "plane/plm/transformer.hpp"

namespace plane::plm {

using geom::PointCloud;
using geom::Vec3;

struct PointEncoderConfig {
  std::size_t groups = 64;
  std::size_t group_size = 32;
  std::size_t dim = 64;
  std::size_t layers = 12;
  std::size_t heads = 4;
  std::vector<std::size_t> tap_layers{2, 5, 8, 11};  // 1-based block indices
  bool canonical_frames = true;  // embed patches in their local PCA frame
  bool normalize_input = true;   // center and scale to unit radius before grouping

  void validate() const {
    require(dim % heads == 0, "PointEncoderConfig: dim must be divisible by heads");
    require(groups >= 1 && group_size >= 1 && layers >= 1, "PointEncoderConfig: sizes must be >= 1");
    require(!tap_layers.empty(), "PointEncoderConfig: tap_layers is empty");
    require(std::is_sorted(tap_layers.begin(), tap_layers.end()) &&
                std::adjacent_find(tap_layers.begin(), tap_layers.end()) == tap_layers.end(),
            "PointEncoderConfig: tap_layers must be strictly ascending");
    for (auto t : tap_layers) require(t >= 1 && t <= layers, "PointEncoderConfig: tap layer out of range");
  }
};

/// Patch grouping of a cloud. All choices depend on geometry only: points
/// are put in lexicographic order first and the sampling seed is a hash of
/// that ordered content, so permuting the input changes nothing.
struct Patches {
  std::vector<Vec3> centers;                       // G centers, FPS order
  std::vector<std::size_t> center_index;           // index into the input cloud
  std::vector<std::vector<std::size_t>> members;   // G x k input indices, by distance
  std::vector<double> relative;                    // (G*k) x 3, member - center
  std::vector<std::size_t> member_map;             // per point: nearest center
  std::vector<std::array<std::size_t, 3>> interp_index;  // per point: nearest centers
  std::vector<std::array<double, 3>> interp_weight;      // inverse-distance weights
  std::size_t interp_count = 0;                           // min(3, G)
  Vec3 cloud_center = Vec3::Zero();
};

inline std::uint64_t content_hash(const std::vector<Vec3>& sorted_points) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : sorted_points)
    for (int a = 0; a < 3; ++a) {
      const auto bits = std::bit_cast<std::uint64_t>(p[a] == 0.0 ? 0.0 : p[a]);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xFF;
        h *= 1099511628211ULL;
      }
    }
  return h;
}

/// Lexicographic point order; ties keep input order.
inline std::vector<std::size_t> lexicographic_order(const PointCloud& cloud) {
  std::vector<std::size_t> order(cloud.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto &p = cloud.points[a], &q = cloud.points[b];
    if (p.x() != q.x()) return p.x() < q.x();
    if (p.y() != q.y()) return p.y() < q.y();
    return p.z() < q.z();
  });
  return order;
}

/// normalize_cloud computed over the points in lexicographic order, so the
/// result does not depend on the input ordering.
inline PointCloud normalize_order_free(const PointCloud& cloud) {
  const auto order = lexicographic_order(cloud);
  PointCloud sorted;
  for (auto i : order) sorted.points.push_back(cloud.points[i]);
  sorted = geom::normalize_cloud(sorted);
  PointCloud out = cloud;
  for (std::size_t j = 0; j < order.size(); ++j) out.points[order[j]] = sorted.points[j];
  return out;
}

inline Patches point_patchify(const PointCloud& cloud, std::size_t groups, std::size_t group_size,
                              std::uint64_t seed = 0) {
  const std::size_t n = cloud.size();
  require(groups >= 1 && groups <= n, "point_patchify: need 1 <= G <= N");
  Patches p;
  require(group_size >= 1 && group_size <= n, "point_patchify: group size exceeds point count");
  const auto order = lexicographic_order(cloud);
  PointCloud sorted;
  sorted.points.reserve(n);
  for (auto i : order) sorted.points.push_back(cloud.points[i]);
  p.cloud_center = geom::centroid(sorted.points);
  const std::uint64_t fps_seed = mix_seed(content_hash(sorted.points), seed);
  const auto picks = geom::farthest_point_sample(sorted, groups, fps_seed);

  const geom::KdTree tree(sorted.points);
  p.relative.reserve(groups * group_size * 3);
  for (auto s : picks) {
    const Vec3 c = sorted.points[s];
    p.centers.push_back(c);
    p.center_index.push_back(order[s]);
    std::vector<std::size_t> mem;
    mem.reserve(group_size);
    for (const auto& nb : tree.knn(c, group_size)) {
      mem.push_back(order[nb.index]);
      const Vec3 r = sorted.points[nb.index] - c;
      p.relative.insert(p.relative.end(), {r.x(), r.y(), r.z()});
    }
    p.members.push_back(std::move(mem));
  }
  const geom::KdTree center_tree(p.centers);
  p.interp_count = std::min<std::size_t>(3, groups);
  p.member_map.resize(n);
  p.interp_index.resize(n);
  p.interp_weight.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto nb = center_tree.knn(cloud.points[i], p.interp_count);
    p.member_map[i] = nb[0].index;
    double total = 0.0;
    std::array<double, 3> w{0.0, 0.0, 0.0};
    std::array<std::size_t, 3> idx{0, 0, 0};
    for (std::size_t j = 0; j < nb.size(); ++j) {
      idx[j] = nb[j].index;
      w[j] = 1.0 / (nb[j].distance + 1e-8);
      total += w[j];
    }
    for (auto& v : w) v /= total;
    p.interp_index[i] = idx;
    p.interp_weight[i] = w;
  }
  return p;
}

/// Rotation-invariant view of each patch: member offsets in the patch's
/// principal axes (last axis pointing away from the cloud center, first
/// axis signed by skew) and the per-axis spreads.
struct CanonicalPatches {
  std::vector<double> coords;       // (G*k) x 3
  std::vector<double> descriptors;  // G x 4: |center - cloud center|, sqrt eigenvalues descending
};

inline CanonicalPatches canonicalize(const Patches& p, double plane_scale = 1.0, double normal_scale = 1.0) {
  const std::size_t g = p.centers.size();
  const std::size_t k = p.members.empty() ? 0 : p.members[0].size();
  CanonicalPatches out;
  out.coords.resize(g * k * 3);
  out.descriptors.resize(g * 4);
  for (std::size_t gi = 0; gi < g; ++gi) {
    const double* rel = p.relative.data() + gi * k * 3;
    geom::Mat3 cov = geom::Mat3::Zero();
    for (std::size_t j = 0; j < k; ++j) {
      const Vec3 r(rel[3 * j], rel[3 * j + 1], rel[3 * j + 2]);
      cov += r * r.transpose();
    }
    cov /= static_cast<double>(k);
    const Eigen::SelfAdjointEigenSolver<geom::Mat3> es(cov);
    Vec3 e1 = es.eigenvectors().col(2), e3 = es.eigenvectors().col(0);
    const Vec3 outward = p.centers[gi] - p.cloud_center;
    if (e3.dot(outward) < 0) e3 = -e3;
    double skew = 0.0;
    for (std::size_t j = 0; j < k; ++j) skew += std::pow(Vec3(rel[3 * j], rel[3 * j + 1], rel[3 * j + 2]).dot(e1), 3);
    if (skew < 0) e1 = -e1;
    const Vec3 e2 = e3.cross(e1);
    for (std::size_t j = 0; j < k; ++j) {
      const Vec3 r(rel[3 * j], rel[3 * j + 1], rel[3 * j + 2]);
      double* o = out.coords.data() + (gi * k + j) * 3;
      o[0] = r.dot(e1) / plane_scale;
      o[1] = r.dot(e2) / plane_scale;
      o[2] = r.dot(e3) / normal_scale;
    }
    const Vec3 ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    double* d = out.descriptors.data() + gi * 4;
    d[0] = outward.norm();
    d[1] = ev[2] / plane_scale;
    d[2] = ev[1] / plane_scale;
    d[3] = ev[0] / normal_scale;
  }
  return out;
}

/// Output of the point encoder for one cloud.
struct EncodedPointCloud {
  Tensor global_feature;             // 1 x dim, unit norm
  std::vector<Tensor> intermediate;  // per tap layer, G x dim residual stream
  Patches patches;
};

/// Frozen point transformer: mini-PointNet patch embedding, centre position
/// embedding, a stack of transformer blocks with taps, and mean pooling.
class PointEncoder {
 public:
  static constexpr std::size_t kHidden1 = 32;
  static constexpr std::size_t kHidden2 = 64;
  // Typical in-plane patch extent and surface-normal offset of a unit-radius cloud.
  static constexpr double kPlaneScale = 0.15;
  static constexpr double kNormalScale = 0.02;

  PointEncoder() = default;

  PointEncoder(const PointEncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed(seed, 0x9017));
    const std::size_t d = cfg_.dim;
    auto he = [](std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
    w1_ = Tensor::randn({3, kHidden1}, rng, cfg_.canonical_frames ? he(3) : he(3) / kPlaneScale);
    b1_ = Tensor::randn({kHidden1}, rng, 0.1);
    w2_ = Tensor::randn({kHidden1, kHidden1}, rng, he(kHidden1));
    b2_ = Tensor::randn({kHidden1}, rng, 0.1);
    w3a_ = Tensor::randn({kHidden1, kHidden2}, rng, he(2 * kHidden1));
    w3b_ = Tensor::randn({kHidden1, kHidden2}, rng, he(2 * kHidden1));
    b3_ = Tensor::randn({kHidden2}, rng, 0.1);
    w4_ = Tensor::randn({kHidden2, d}, rng, 1.0 / std::sqrt(static_cast<double>(kHidden2)));
    b4_ = Tensor::randn({d}, rng, 0.1);
    pos1_ = cfg_.canonical_frames ? Tensor::randn({4, kHidden2}, rng, 1.0) : Tensor::randn({3, kHidden2}, rng, 2.0);
    pos_b1_ = Tensor::randn({kHidden2}, rng, 0.1);
    pos2_ = Tensor::randn({kHidden2, d}, rng, 1.0 / std::sqrt(static_cast<double>(kHidden2)));
    for (std::size_t i = 0; i < cfg_.layers; ++i) blocks_.emplace_back(d, cfg_.heads, cfg_.layers, rng);
  }

  const PointEncoderConfig& config() const { return cfg_; }

  /// Group tokens (G x dim) from grouped relative coordinates.
  Tensor embed_groups(const Patches& p, const CanonicalPatches* canon = nullptr) const {
    const std::size_t g = p.centers.size();
    const std::size_t k = p.members.empty() ? 0 : p.members[0].size();
    const Tensor rel({g * k, 3}, canon ? canon->coords : p.relative);
    const Tensor h1 = ad::relu(ad::linear(rel, w1_, b1_));
    const Tensor h2 = ad::linear(h1, w2_, b2_);
    const Tensor pooled = ad::max(ad::reshape(h2, {g, k, kHidden1}), 1);  // G x H1
    const Tensor local = ad::reshape(ad::matmul(h2, w3a_), {g, k, kHidden2});
    const Tensor global = ad::reshape(ad::linear(pooled, w3b_, b3_), {g, 1, kHidden2});
    const Tensor h3 = ad::relu(ad::add(local, global));
    const Tensor h4 = ad::linear(ad::reshape(h3, {g * k, kHidden2}), w4_, b4_);
    return ad::max(ad::reshape(h4, {g, k, cfg_.dim}), 1);
  }

  EncodedPointCloud encode(const PointCloud& cloud) const {
    require(cloud.size() >= cfg_.groups, "point_encode: cloud has fewer points than groups");
    EncodedPointCloud out;
    out.patches = point_patchify(cfg_.normalize_input ? normalize_order_free(cloud) : cloud, cfg_.groups,
                                 std::min(cfg_.group_size, cloud.size()));
    Tensor pos_in, tokens;
    if (cfg_.canonical_frames) {
      const CanonicalPatches canon = canonicalize(out.patches, kPlaneScale, kNormalScale);
      pos_in = Tensor({cfg_.groups, 4}, canon.descriptors);
      tokens = embed_groups(out.patches, &canon);
    } else {
      std::vector<double> c;
      for (const auto& v : out.patches.centers) c.insert(c.end(), {v.x(), v.y(), v.z()});
      pos_in = Tensor({cfg_.groups, 3}, std::move(c));
      tokens = embed_groups(out.patches);
    }
    const Tensor pos = ad::matmul(ad::gelu(ad::linear(pos_in, pos1_, pos_b1_)), pos2_);
    Tensor x = ad::add(tokens, pos);
    std::size_t next_tap = 0;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      x = blocks_[l].forward(x);
      if (next_tap < cfg_.tap_layers.size() && cfg_.tap_layers[next_tap] == l + 1) {
        out.intermediate.push_back(x);
        ++next_tap;
      }
    }
    out.global_feature = ad::l2_normalize(ad::mean(ad::layernorm(x), 0, true), -1);
    return out;
  }

  std::vector<ad::Parameter> parameters() const {
    std::vector<ad::Parameter> out{{"point.embed.w1", w1_, "frozen"},   {"point.embed.b1", b1_, "frozen"},
                                   {"point.embed.w2", w2_, "frozen"},   {"point.embed.b2", b2_, "frozen"},
                                   {"point.embed.w3a", w3a_, "frozen"}, {"point.embed.w3b", w3b_, "frozen"},
                                   {"point.embed.b3", b3_, "frozen"},   {"point.embed.w4", w4_, "frozen"},
                                   {"point.embed.b4", b4_, "frozen"},   {"point.pos.w1", pos1_, "frozen"},
                                   {"point.pos.b1", pos_b1_, "frozen"}, {"point.pos.w2", pos2_, "frozen"}};
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("point.block" + std::to_string(i) + ".", out);
    return out;
  }

 private:
  PointEncoderConfig cfg_;
  Tensor w1_, b1_, w2_, b2_, w3a_, w3b_, b3_, w4_, b4_, pos1_, pos_b1_, pos2_;
  std::vector<TransformerBlock> blocks_;
};

}  // namespace plane::plm
