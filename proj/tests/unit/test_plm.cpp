#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "plane/dataset/shapes.hpp"
#include "plane/geom3d/rotation.hpp"
#include "plane/plm/point_encoder.hpp"
#include "plane/plm/text_encoder.hpp"
#include "plane/plm/tokenizer.hpp"

using namespace plane;
using ad::Tensor;
using geom::PointCloud;
using geom::Vec3;

namespace {

double norm(const Tensor& t) {
  double s = 0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

plm::TextEncoder text_encoder() {
  return plm::TextEncoder(plm::TextEncoderConfig{}, plm::Tokenizer({"sphere", "box", "torus"}), 2024);
}

}  // namespace

TEST(tokenizer, known_unknown_and_round_trip) {
  const plm::Tokenizer tok({"bottle", "Cup Holder"});
  const auto ids = tok.tokenize("bottle");
  ASSERT_EQ(ids.size(), 1u);
  EXPECT_NE(ids[0], plm::Tokenizer::kUnk);
  EXPECT_EQ(tok.tokenize("BOTTLE"), ids);
  EXPECT_EQ(tok.tokenize("a bottle"), (std::vector<std::size_t>{plm::Tokenizer::kUnk, ids[0]}));
  EXPECT_EQ(tok.tokenize("cup holder").size(), 2u);
  EXPECT_TRUE(tok.tokenize("").empty());
  for (std::size_t i = 0; i < tok.size(); ++i) EXPECT_EQ(tok.id(tok.word(i)), i);
  EXPECT_THROW(tok.word(tok.size()), Error);
  const auto again = plm::Tokenizer::from_words(tok.words());
  EXPECT_EQ(again.tokenize("cup bottle"), tok.tokenize("cup bottle"));
}

TEST(text_encoder, unit_norm_and_deterministic) {
  const auto enc = text_encoder();
  Rng rng(1);
  const auto seq = Tensor::randn({8, 64}, rng, 1.0);
  const auto a = enc.encode(seq), b = enc.encode(seq);
  EXPECT_NEAR(norm(a), 1.0, 1e-9);
  EXPECT_EQ(max_abs_diff(a, b), 0.0);
  const auto other = text_encoder();
  EXPECT_EQ(max_abs_diff(a, other.encode(seq)), 0.0);
}

TEST(text_encoder, position_sensitive) {
  const auto enc = text_encoder();
  Rng rng(2);
  auto seq = Tensor::randn({6, 64}, rng, 1.0);
  auto swapped = Tensor({6, 64}, std::vector<double>(seq.data().begin(), seq.data().end()));
  auto d = swapped.mutable_data();
  for (std::size_t c = 0; c < 64; ++c) std::swap(d[0 * 64 + c], d[1 * 64 + c]);
  EXPECT_GT(max_abs_diff(enc.encode(seq), enc.encode(swapped)), 1e-4);
}

TEST(text_encoder, length_and_shape_errors) {
  const auto enc = text_encoder();
  try {
    enc.encode(Tensor::zeros({17, 64}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("max_len"), std::string::npos);
  }
  EXPECT_THROW(enc.encode(Tensor::zeros({4, 32})), Error);
  EXPECT_THROW(enc.embed_text(""), Error);
  plm::TextEncoderConfig bad;
  bad.heads = 5;
  EXPECT_THROW(plm::TextEncoder(bad, plm::Tokenizer(), 0), Error);
}

TEST(text_encoder, gradient_reaches_inputs_not_weights) {
  const auto enc = text_encoder();
  Rng rng(3);
  auto seq = Tensor::randn({5, 64}, rng, 1.0, true);
  const auto target = Tensor::randn({1, 64}, rng, 1.0);
  ad::backward(ad::sum(ad::mul(enc.encode(seq), target)));
  ASSERT_TRUE(seq.has_grad());
  double g = 0;
  for (double v : seq.grad()) g += std::abs(v);
  EXPECT_GT(g, 1e-6);
  for (const auto& p : enc.parameters()) {
    EXPECT_FALSE(p.tensor.requires_grad()) << p.name;
    EXPECT_FALSE(p.tensor.has_grad()) << p.name;
  }
}

TEST(point_patchify, singleton_groups) {
  const auto c = dataset::synth_shape("sphere", 128, 0.0, 1);
  const auto p = plm::point_patchify(c, 128, 1);
  ASSERT_EQ(p.centers.size(), 128u);
  for (double v : p.relative) EXPECT_EQ(v, 0.0);
  for (std::size_t g = 0; g < 128; ++g) EXPECT_EQ(p.members[g][0], p.center_index[g]);
  for (std::size_t i = 0; i < 128; ++i) EXPECT_EQ(p.centers[p.member_map[i]], c.points[i]);
}

TEST(point_patchify, group_sizes_and_nearest_center_map) {
  const auto c = dataset::synth_shape("torus", 1024, 0.002, 2);
  const auto p = plm::point_patchify(c, 64, 32);
  ASSERT_EQ(p.members.size(), 64u);
  for (std::size_t g = 0; g < 64; ++g) {
    ASSERT_EQ(p.members[g].size(), 32u);
    EXPECT_EQ(p.centers[g], c.points[p.center_index[g]]);
    for (std::size_t j = 0; j < 32; ++j) {
      const Vec3 r = c.points[p.members[g][j]] - p.centers[g];
      for (int a = 0; a < 3; ++a) EXPECT_EQ(p.relative[(g * 32 + j) * 3 + a], r[a]);
    }
  }
  for (std::size_t i = 0; i < c.size(); ++i) {
    double best = 1e300;
    for (const auto& ctr : p.centers) best = std::min(best, (c.points[i] - ctr).norm());
    EXPECT_EQ((c.points[i] - p.centers[p.member_map[i]]).norm(), best);
    double wsum = 0;
    for (double w : p.interp_weight[i]) wsum += w;
    EXPECT_NEAR(wsum, 1.0, 1e-12);
  }
  EXPECT_THROW(plm::point_patchify(c, 2000, 32), Error);
}

TEST(point_patchify, independent_of_point_order) {
  const auto c = dataset::synth_shape("box", 600, 0.002, 3);
  PointCloud shuffled = c;
  Rng rng(4);
  std::vector<std::size_t> perm(c.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  for (std::size_t i = 0; i < perm.size(); ++i) shuffled.points[i] = c.points[perm[i]];
  const auto a = plm::point_patchify(c, 32, 16), b = plm::point_patchify(shuffled, 32, 16);
  EXPECT_EQ(a.centers, b.centers);
  EXPECT_EQ(a.relative, b.relative);
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(b.member_map[i], a.member_map[perm[i]]);
}

TEST(canonicalize, frame_is_rotation_invariant) {
  const auto c = dataset::synth_shape("cylinder", 800, 0.002, 5);
  const auto p = plm::point_patchify(c, 16, 24);
  const auto canon = plm::canonicalize(p);
  // Rotating every patch rigidly about its center leaves the canonical coordinates unchanged.
  const auto rot = geom::rotation_matrix({0.4, 1.3, 2.1});
  plm::Patches q = p;
  for (std::size_t i = 0; i < p.relative.size(); i += 3) {
    const Vec3 r = rot * Vec3(p.relative[i], p.relative[i + 1], p.relative[i + 2]);
    q.relative[i] = r.x();
    q.relative[i + 1] = r.y();
    q.relative[i + 2] = r.z();
  }
  for (std::size_t g = 0; g < p.centers.size(); ++g) q.centers[g] = rot * p.centers[g];
  q.cloud_center = rot * p.cloud_center;
  const auto cq = plm::canonicalize(q);
  for (std::size_t i = 0; i < canon.coords.size(); ++i) EXPECT_NEAR(canon.coords[i], cq.coords[i], 1e-9);
  for (std::size_t i = 0; i < canon.descriptors.size(); ++i) EXPECT_NEAR(canon.descriptors[i], cq.descriptors[i], 1e-9);
  for (std::size_t g = 0; g < 16; ++g) {
    const double* d = canon.descriptors.data() + g * 4;
    EXPECT_GE(d[1], d[2]);
    EXPECT_GE(d[2], d[3]);
  }
}

TEST(point_encoder, shapes_norm_and_determinism) {
  const plm::PointEncoder enc(plm::PointEncoderConfig{}, 2024);
  const auto c = dataset::synth_shape("sphere", 1024, 0.002, 6);
  const auto a = enc.encode(c), b = enc.encode(c);
  EXPECT_EQ(a.global_feature.shape(), (ad::Shape{1, 64}));
  EXPECT_NEAR(norm(a.global_feature), 1.0, 1e-9);
  ASSERT_EQ(a.intermediate.size(), 4u);
  for (const auto& t : a.intermediate) EXPECT_EQ(t.shape(), (ad::Shape{64, 64}));
  EXPECT_EQ(max_abs_diff(a.global_feature, b.global_feature), 0.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(max_abs_diff(a.intermediate[i], b.intermediate[i]), 0.0);
  EXPECT_EQ(a.patches.member_map.size(), c.size());
}

TEST(point_encoder, permutation_invariant) {
  const plm::PointEncoder enc(plm::PointEncoderConfig{}, 2024);
  const auto c = dataset::synth_shape("cone", 512, 0.002, 7);
  PointCloud rev = c;
  std::reverse(rev.points.begin(), rev.points.end());
  const auto a = enc.encode(c), b = enc.encode(rev);
  EXPECT_LT(max_abs_diff(a.global_feature, b.global_feature), 1e-9);
  for (std::size_t i = 0; i < a.intermediate.size(); ++i) EXPECT_LT(max_abs_diff(a.intermediate[i], b.intermediate[i]), 1e-9);
}

TEST(point_encoder, taps_follow_residual_stream_in_order) {
  plm::PointEncoderConfig cfg;
  cfg.layers = 4;
  cfg.tap_layers = {1, 2, 3, 4};
  cfg.groups = 16;
  cfg.group_size = 8;
  const plm::PointEncoder enc(cfg, 1);
  cfg.tap_layers = {4};
  const plm::PointEncoder last_only(cfg, 1);
  const auto c = dataset::synth_shape("box", 256, 0.002, 8);
  const auto all = enc.encode(c), one = last_only.encode(c);
  EXPECT_EQ(max_abs_diff(all.intermediate[3], one.intermediate[0]), 0.0);
  EXPECT_GT(max_abs_diff(all.intermediate[0], all.intermediate[3]), 1e-6);
}

TEST(point_encoder, config_validation) {
  plm::PointEncoderConfig cfg;
  cfg.tap_layers = {0, 3};
  EXPECT_THROW(plm::PointEncoder(cfg, 0), Error);
  cfg.tap_layers = {13};
  EXPECT_THROW(plm::PointEncoder(cfg, 0), Error);
  cfg.tap_layers = {5, 2};
  EXPECT_THROW(plm::PointEncoder(cfg, 0), Error);
  cfg = {};
  cfg.dim = 66;
  EXPECT_THROW(plm::PointEncoder(cfg, 0), Error);
  const plm::PointEncoder enc(plm::PointEncoderConfig{}, 0);
  auto small = dataset::synth_shape("sphere", 64, 0.0, 1);
  small.points.resize(40);
  EXPECT_THROW(enc.encode(small), Error);
}

TEST(point_encoder, weights_are_frozen_and_seeded) {
  const plm::PointEncoder a(plm::PointEncoderConfig{}, 5), b(plm::PointEncoderConfig{}, 5), c(plm::PointEncoderConfig{}, 6);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  std::set<std::string> names;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(names.insert(pa[i].name).second);
    EXPECT_FALSE(pa[i].tensor.requires_grad());
    EXPECT_EQ(max_abs_diff(pa[i].tensor, pb[i].tensor), 0.0);
  }
  EXPECT_GT(max_abs_diff(pa[0].tensor, pc[0].tensor), 0.0);
}
