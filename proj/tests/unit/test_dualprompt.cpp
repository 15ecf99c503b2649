#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "plane/dataset/shapes.hpp"
#include "plane/dualprompt/model.hpp"
#include "support/oracles.hpp"

using namespace plane;
using ad::Tensor;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

double grad_l1(const Tensor& t) {
  double s = 0;
  for (double g : t.grad()) s += std::abs(g);
  return s;
}

dp::ModelConfig small_config() {
  dp::ModelConfig c;
  c.categories = {"sphere", "box"};
  c.point.layers = 4;
  c.point.tap_layers = {2, 4};
  c.point.groups = 32;
  c.point.group_size = 16;
  c.text.layers = 2;
  return c;
}

}  // namespace

TEST(dpcm, zero_weights_give_zero_prompts) {
  Rng rng(1);
  dp::PromptSet p(dp::HeadConfig{}, 64, {"box"}, rng);
  for (Tensor* t : {&p.dpcm_w1, &p.dpcm_b1, &p.dpcm_w2, &p.dpcm_b2}) *t = Tensor::zeros(t->shape(), true);
  const auto out = dp::dpcm(Tensor::randn({1, 64}, rng, 1.0), p);
  EXPECT_EQ(out.text.shape(), (ad::Shape{1, 64}));
  for (double v : out.text.data()) EXPECT_EQ(v, 0.0);
  for (double v : out.point.data()) EXPECT_EQ(v, 0.0);
}

TEST(dpcm, deterministic_and_matches_finite_differences) {
  Rng rng(2);
  dp::HeadConfig cfg;
  cfg.dpcm_hidden = 16;
  dp::PromptSet p(cfg, 8, {"box"}, rng);
  const auto f = Tensor::randn({1, 8}, rng, 1.0);
  const auto a = dp::dpcm(f, p), b = dp::dpcm(f, p);
  EXPECT_EQ(max_abs_diff(a.text, b.text), 0.0);
  EXPECT_EQ(max_abs_diff(a.point, b.point), 0.0);
  std::vector<Tensor> leaves{p.dpcm_w1, p.dpcm_b1, p.dpcm_w2, p.dpcm_b2};
  const auto target = Tensor::randn({1, 8}, rng, 1.0);
  const auto loss = [&](const std::vector<Tensor>& l) {
    dp::PromptSet q = p;
    q.dpcm_w1 = l[0];
    q.dpcm_b1 = l[1];
    q.dpcm_w2 = l[2];
    q.dpcm_b2 = l[3];
    const auto d = dp::dpcm(f, q);
    return ad::add(ad::sum(ad::mul(d.text, target)), ad::sum(ad::mul(d.point, d.point)));
  };
  EXPECT_LT(oracle::gradient_check(leaves, loss), 1e-4);
  EXPECT_THROW(dp::dpcm(Tensor::zeros({1, 7}), p), Error);
}

TEST(build_text_features, identical_prompts_and_class_sensitivity) {
  const plm::TextEncoder enc(plm::TextEncoderConfig{}, plm::Tokenizer({"sphere", "box"}), 2024);
  Rng rng(3);
  dp::PromptSet p(dp::HeadConfig{}, 64, {"sphere", "box"}, rng);
  const auto dyn = Tensor::randn({1, 64}, rng, 1.0);
  auto tf = dp::build_text_features(enc, p, dyn, "box");
  EXPECT_NEAR(std::sqrt(ad::sum(ad::mul(tf.normal, tf.normal)).item()), 1.0, 1e-9);
  EXPECT_NEAR(std::sqrt(ad::sum(ad::mul(tf.anomalous, tf.anomalous)).item()), 1.0, 1e-9);
  EXPECT_GT(max_abs_diff(tf.normal, tf.anomalous), 1e-6);
  const auto other = dp::build_text_features(enc, p, dyn, "sphere");
  EXPECT_GT(max_abs_diff(tf.normal, other.normal), 1e-6);
  EXPECT_GT(max_abs_diff(tf.anomalous, other.anomalous), 1e-6);
  dp::PromptSet same = p;
  same.text_anomalous = p.text_normal;
  tf = dp::build_text_features(enc, same, dyn, "box");
  EXPECT_EQ(max_abs_diff(tf.normal, tf.anomalous), 0.0);
}

TEST(build_text_features, gradient_reaches_prompts_through_frozen_encoder) {
  const plm::TextEncoder enc(plm::TextEncoderConfig{}, plm::Tokenizer({"box"}), 2024);
  Rng rng(4);
  dp::PromptSet p(dp::HeadConfig{}, 64, {"box"}, rng);
  auto dyn = Tensor::randn({1, 64}, rng, 1.0, true);
  const auto tf = dp::build_text_features(enc, p, dyn, "box");
  ad::backward(ad::sum(ad::mul(tf.normal, tf.anomalous)));
  EXPECT_GT(grad_l1(p.text_normal), 0.0);
  EXPECT_GT(grad_l1(p.text_anomalous), 0.0);
  EXPECT_GT(grad_l1(dyn), 0.0);
  for (const auto& fp : enc.parameters()) EXPECT_FALSE(fp.tensor.has_grad());
}

TEST(pcfa_project, zero_output_path_is_identity) {
  Rng rng(5);
  dp::PcfaAdapter a(16, 0.02, rng);
  a.w2 = Tensor::zeros(a.w2.shape(), true);
  const auto f = Tensor::randn({10, 16}, rng, 1.0);
  for (std::size_t mp : {1, 4, 7}) {
    const auto ps = Tensor::randn({mp, 16}, rng, 1.0);
    const auto out = dp::pcfa_project(f, ps, Tensor::randn({1, 16}, rng, 1.0), a);
    EXPECT_EQ(out.shape(), (ad::Shape{10, 16}));
    EXPECT_EQ(max_abs_diff(out, f), 0.0);
  }
}

TEST(pcfa_project, prompt_gradients_need_mixing) {
  Rng rng(6);
  dp::PcfaAdapter a(16, 0.5, rng);
  const auto f = Tensor::randn({10, 16}, rng, 1.0);
  for (bool mixing : {true, false}) {
    auto ps = Tensor::randn({4, 16}, rng, 1.0, true);
    auto dyn = Tensor::randn({1, 16}, rng, 1.0, true);
    ad::backward(ad::sum(ad::mul(dp::pcfa_project(f, ps, dyn, a, mixing), f)));
    if (mixing) {
      EXPECT_GT(grad_l1(ps), 1e-8);
      EXPECT_GT(grad_l1(dyn), 1e-8);
    } else {
      EXPECT_EQ(grad_l1(ps), 0.0);
    }
  }
}

TEST(pcfa_project, matches_finite_differences) {
  Rng rng(7);
  dp::PcfaAdapter a(8, 0.5, rng);
  const auto f = Tensor::randn({5, 8}, rng, 1.0);
  std::vector<Tensor> leaves{Tensor::randn({3, 8}, rng, 1.0, true), Tensor::randn({1, 8}, rng, 1.0, true), a.w1, a.w2};
  const auto loss = [&](const std::vector<Tensor>& l) {
    dp::PcfaAdapter b = a;
    b.w1 = l[2];
    b.w2 = l[3];
    const auto out = dp::pcfa_project(f, l[0], l[1], b);
    return ad::sum(ad::mul(out, out));
  };
  EXPECT_LT(oracle::gradient_check(leaves, loss), 1e-4);
  EXPECT_THROW(dp::pcfa_project(Tensor::zeros({5, 7}), leaves[0], leaves[1], a), Error);
}

TEST(token_scores, symmetric_bounded_and_normalized) {
  Rng rng(8);
  const auto fp = Tensor::randn({20, 16}, rng, 1.0);
  const auto t = ad::l2_normalize(Tensor::randn({1, 16}, rng, 1.0));
  const auto half = dp::token_scores(fp, {t, t});
  for (double s : half.data()) EXPECT_EQ(s, 0.5);
  const dp::TextFeatures tf{t, ad::l2_normalize(Tensor::randn({1, 16}, rng, 1.0))};
  const auto s = dp::token_scores(fp, tf), flipped = dp::token_scores(fp, {tf.anomalous, tf.normal});
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_GT(s[i], 0.0);
    EXPECT_LT(s[i], 1.0);
    EXPECT_NEAR(s[i] + flipped[i], 1.0, 1e-12);
    // Direct evaluation of the two-class formula.
    double dn = 0, da = 0, nf = 0;
    for (std::size_t c = 0; c < 16; ++c) {
      dn += fp[i * 16 + c] * tf.normal[c];
      da += fp[i * 16 + c] * tf.anomalous[c];
      nf += fp[i * 16 + c] * fp[i * 16 + c];
    }
    const double cn = dn / (std::sqrt(nf) + 1e-8), ca = da / (std::sqrt(nf) + 1e-8);
    EXPECT_NEAR(s[i], std::exp(ca) / (std::exp(cn) + std::exp(ca)), 1e-9);
  }
}

TEST(two_class_scores, shift_invariant) {
  Rng rng(9);
  const auto a = Tensor::randn({50}, rng, 1.0), b = Tensor::randn({50}, rng, 1.0);
  const auto base = dp::two_class_scores(a, b);
  for (double c : {-30.0, -1.0, 0.5, 40.0}) {
    const auto shifted = dp::two_class_scores(ad::add_scalar(a, c), ad::add_scalar(b, c));
    EXPECT_LT(max_abs_diff(base, shifted), 1e-12);
  }
}

TEST(interpolate_scores, coincident_point_takes_token_score) {
  const auto cloud = dataset::synth_shape("sphere", 400, 0.0, 10);
  const auto p = plm::point_patchify(cloud, 20, 8);
  Rng rng(11);
  std::vector<double> tok(20);
  for (auto& v : tok) v = rng.uniform();
  const auto pts = dp::interpolate_scores(Tensor({20}, tok), p);
  for (std::size_t g = 0; g < 20; ++g) EXPECT_NEAR(pts[p.center_index[g]], tok[g], 1e-6);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    double want = 0;
    for (std::size_t j = 0; j < 3; ++j) want += p.interp_weight[i][j] * tok[p.interp_index[i][j]];
    EXPECT_NEAR(pts[i], want, 1e-15);
  }
  EXPECT_THROW(dp::interpolate_scores(Tensor({19}, std::vector<double>(19, 0.0)), p), Error);
}

TEST(aggregate, mean_max_and_rank_agreement) {
  const std::vector<double> m{0.1, 0.7, 0.3};
  const auto same = dp::aggregate_maps({m, m, m});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(same.point_scores[i], m[i], 1e-15);
  EXPECT_DOUBLE_EQ(same.object_score, 0.7);
  EXPECT_THROW(dp::aggregate_maps({}), Error);
  EXPECT_THROW(dp::aggregate_maps({{0.1, 0.2}, {0.3}}), Error);

  Rng rng(12);
  std::vector<double> by_mean, by_sum;
  for (int s = 0; s < 30; ++s) {
    std::vector<std::vector<double>> maps(4, std::vector<double>(25));
    for (auto& mm : maps)
      for (auto& v : mm) v = rng.uniform();
    by_mean.push_back(dp::aggregate_maps(maps).object_score);
    double best = 0;
    for (std::size_t i = 0; i < 25; ++i) {
      double t = 0;
      for (const auto& mm : maps) t += mm[i];
      best = std::max(best, t);
    }
    by_sum.push_back(best);
  }
  std::vector<std::size_t> ra(30), rb(30);
  std::iota(ra.begin(), ra.end(), std::size_t{0});
  std::iota(rb.begin(), rb.end(), std::size_t{0});
  std::sort(ra.begin(), ra.end(), [&](auto x, auto y) { return by_mean[x] < by_mean[y]; });
  std::sort(rb.begin(), rb.end(), [&](auto x, auto y) { return by_sum[x] < by_sum[y]; });
  EXPECT_EQ(ra, rb);
}

TEST(plane_model, infer_contract_and_determinism) {
  const dp::PlaneModel model(small_config());
  const auto cloud = dataset::synth_shape("box", 512, 0.002, 13);
  const auto a = model.infer(cloud, "box"), b = model.infer(cloud, "box");
  ASSERT_EQ(a.point_scores.size(), 512u);
  EXPECT_EQ(a.point_scores, b.point_scores);
  EXPECT_EQ(a.per_layer.size(), 2u);
  for (double s : a.point_scores) {
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
  EXPECT_EQ(a.object_score, *std::max_element(a.point_scores.begin(), a.point_scores.end()));
  EXPECT_THROW(model.infer(cloud, "teapot"), Error);
}

TEST(plane_model, parameter_partition) {
  const dp::PlaneModel model(small_config());
  std::set<std::string> names;
  for (const auto& p : model.trainable_parameters()) {
    EXPECT_TRUE(p.name.rfind("prompts.", 0) == 0 || p.name.rfind("pcfa.", 0) == 0) << p.name;
    EXPECT_TRUE(p.tensor.requires_grad());
    EXPECT_TRUE(names.insert(p.name).second);
  }
  EXPECT_TRUE(names.count("prompts.point.sphere"));
  EXPECT_TRUE(names.count("pcfa.4.w2"));
  for (const auto& p : model.frozen_parameters()) {
    EXPECT_TRUE(p.name.rfind("text.", 0) == 0 || p.name.rfind("point.", 0) == 0) << p.name;
    EXPECT_FALSE(p.tensor.requires_grad());
    EXPECT_TRUE(names.insert(p.name).second);
  }
}

TEST(plane_model, checkpoint_round_trip_and_encoder_guard) {
  const auto dir = std::filesystem::temp_directory_path() / "plane_model_test";
  std::filesystem::create_directories(dir);
  auto cfg = small_config();
  cfg.seed = 3;
  const dp::PlaneModel model(cfg);
  model.save(dir / "m.ckpt");
  const auto back = dp::PlaneModel::load(dir / "m.ckpt");
  EXPECT_EQ(back.encoder_checksum(), model.encoder_checksum());
  EXPECT_EQ(dp::PlaneModel::parameter_checksum(back.trainable_parameters()),
            dp::PlaneModel::parameter_checksum(model.trainable_parameters()));
  const auto cloud = dataset::synth_shape("sphere", 256, 0.002, 14);
  EXPECT_EQ(back.infer(cloud, "sphere").point_scores, model.infer(cloud, "sphere").point_scores);

  auto ck = model.checkpoint();
  ck.meta["config"]["encoder_seed"] = 999;
  EXPECT_THROW(dp::PlaneModel::from_checkpoint(ck), Error);
  ck = model.checkpoint();
  ck.meta["kind"] = "other";
  EXPECT_THROW(dp::PlaneModel::from_checkpoint(ck), Error);
}

TEST(plane_model, external_encoder_weights) {
  const auto dir = std::filesystem::temp_directory_path() / "plane_model_weights";
  std::filesystem::create_directories(dir);
  auto cfg = small_config();
  const dp::PlaneModel donor(cfg);
  donor.save_encoder_weights(dir / "enc.ckpt");
  cfg.encoder_seed = 7;
  dp::PlaneModel model(cfg);
  EXPECT_NE(model.encoder_checksum(), donor.encoder_checksum());
  model.load_encoder_weights(dir / "enc.ckpt");
  EXPECT_EQ(model.encoder_checksum(), donor.encoder_checksum());
  model.save(dir / "m.ckpt");
  EXPECT_EQ(dp::PlaneModel::load(dir / "m.ckpt").encoder_checksum(), donor.encoder_checksum());
}

TEST(model_config, json_round_trip) {
  auto cfg = small_config();
  cfg.head.temperature = 5.0;
  cfg.point.canonical_frames = false;
  const auto back = dp::model_config_from_json(nlohmann::json::parse(dp::to_json(cfg).dump()));
  EXPECT_EQ(dp::to_json(back), dp::to_json(cfg));
  cfg.head.text_prompt_len = 15;
  EXPECT_THROW(cfg.validate(), Error);
}
