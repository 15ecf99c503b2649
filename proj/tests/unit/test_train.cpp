#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "plane/dataset/dataset.hpp"
#include "plane/train/losses.hpp"
#include "plane/train/trainer.hpp"
#include "support/oracles.hpp"

using namespace plane;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

Tensor probs(std::vector<double> v, bool requires_grad = false) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v), requires_grad);
}

dp::ModelConfig tiny_model() {
  dp::ModelConfig c;
  c.categories = {"sphere", "box"};
  c.point.layers = 3;
  c.point.tap_layers = {1, 3};
  c.point.groups = 16;
  c.point.group_size = 16;
  c.text.layers = 1;
  return c;
}

std::vector<dataset::Sample> tiny_train() {
  dataset::DatasetSpec s;
  s.categories = {"sphere", "box"};
  s.train_per_class = 2;
  s.test_normal_per_class = 1;
  s.test_anomalous_per_class = 1;
  s.points_per_sample = 256;
  s.seed = 5;
  return dataset::build_dataset(s, {}).train;
}

ano3d::AnomalyConfig tiny_defects() {
  ano3d::AnomalyConfig a;
  a.m = 24;
  a.x = 15;
  a.hole_boundary_k = 8;
  return a;
}

}  // namespace

TEST(focal_loss, closed_forms) {
  EXPECT_NEAR(train::focal_loss(probs({0.5}), probs({1.0})).item(), 0.25 * 0.25 * std::log(2.0), 1e-12);
  EXPECT_NEAR(train::focal_loss(probs({0.5}), probs({1.0})).item(), 0.043321, 1e-6);
  EXPECT_LT(train::focal_loss(probs({1.0, 0.0, 1.0}), probs({1.0, 0.0, 1.0})).item(), 1e-5);
  // gamma = 0, alpha = 0.5 collapses to half the binary cross-entropy
  const std::vector<double> p{0.1, 0.8, 0.35, 0.6}, y{0, 1, 1, 0};
  double bce = 0;
  for (std::size_t i = 0; i < p.size(); ++i) bce -= y[i] * std::log(p[i]) + (1 - y[i]) * std::log(1 - p[i]);
  bce /= double(p.size());
  EXPECT_NEAR(train::focal_loss(probs(p), probs(y), 0.5, 0.0).item(), 0.5 * bce, 1e-12);
  EXPECT_TRUE(std::isfinite(train::focal_loss(probs({0.0, 1.0}), probs({1.0, 0.0})).item()));
  EXPECT_THROW(train::focal_loss(probs({0.5}), probs({1.0, 0.0})), Error);
}

TEST(dice_loss, closed_forms) {
  EXPECT_NEAR(train::dice_loss(probs({1, 0, 1, 1}), probs({1, 0, 1, 1})).item(), 0.0, 1e-15);
  std::vector<double> pred(200, 0.0), gt(200, 0.0);
  for (int i = 0; i < 100; ++i) pred[i] = 1.0, gt[100 + i] = 1.0;
  EXPECT_NEAR(train::dice_loss(probs(pred), probs(gt)).item(), 1.0 - 1.0 / 201.0, 1e-12);
  EXPECT_NEAR(train::dice_loss(probs(std::vector<double>(10, 0.0)), probs(std::vector<double>(10, 0.0))).item(), 0.0, 1e-15);
}

TEST(losses, gradients_match_finite_differences) {
  Rng rng(1);
  std::vector<double> p(30), y(30);
  for (std::size_t i = 0; i < 30; ++i) {
    p[i] = rng.uniform(0.05, 0.95);
    y[i] = rng.uniform() < 0.2;
  }
  std::vector<Tensor> leaves{probs(p, true)};
  const auto gt = probs(y);
  EXPECT_LT(oracle::gradient_check(leaves, [&](const auto& l) { return train::focal_loss(l[0], gt); }), 1e-4);
  EXPECT_LT(oracle::gradient_check(leaves, [&](const auto& l) { return train::dice_loss(l[0], gt); }), 1e-4);
}

TEST(train_config, parse_formats_and_errors) {
  const auto kv = train::parse_train_config("# comment\nepochs = 12\nbatch_size=2\nloss=focal\nlr_adapter=0.001\n");
  EXPECT_EQ(kv.epochs, 12u);
  EXPECT_EQ(kv.batch_size, 2u);
  EXPECT_EQ(kv.loss, train::LossMode::focal);
  EXPECT_DOUBLE_EQ(kv.lr_adapter, 1e-3);
  EXPECT_DOUBLE_EQ(kv.lr_prompts_dpcm, 1e-5);
  const auto js = train::parse_train_config(train::to_json(kv).dump());
  EXPECT_EQ(train::to_json(js), train::to_json(kv));
  EXPECT_THROW(train::parse_train_config("epoch=3\n"), Error);
  EXPECT_THROW(train::parse_train_config("loss=hinge\n"), Error);
  train::TrainConfig bad;
  bad.lr_adapter = 0;
  EXPECT_THROW(bad.validate(), Error);
  bad = {};
  bad.checkpoint_every = 5;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(optimizer, groups_and_parameter_count) {
  const dp::PlaneModel model(tiny_model());
  train::TrainConfig cfg;
  const auto opt = train::make_optimizer(model, cfg);
  std::size_t expected = 0;
  for (const auto& p : opt.params()) {
    expected += p.tensor.numel();
    EXPECT_DOUBLE_EQ(opt.lr(p.group), p.name.rfind("pcfa.", 0) == 0 ? 1e-4 : 1e-5) << p.name;
  }
  EXPECT_EQ(opt.parameter_count(), expected);
}

TEST(epoch_batches, ratio_reshuffle_and_masks) {
  const auto trainset = tiny_train();
  train::TrainConfig cfg;
  cfg.seed = 3;
  const auto a = train::epoch_batches(trainset, 0, cfg, tiny_defects());
  ASSERT_EQ(a.size(), 1u);
  ASSERT_EQ(a[0].size(), 4u);
  for (std::size_t j = 0; j < 4; ++j) {
    const auto pos = std::count(a[0][j].mask.begin(), a[0][j].mask.end(), 1);
    if (j < 3) {
      EXPECT_GT(pos, 0);
    } else {
      EXPECT_EQ(pos, 0);
    }
    EXPECT_LT(double(pos) / double(a[0][j].mask.size()), 0.10);
    EXPECT_EQ(a[0][j].mask.size(), a[0][j].cloud.size());
  }
  const auto again = train::epoch_batches(trainset, 0, cfg, tiny_defects(), 3);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(again[0][j].cloud.points, a[0][j].cloud.points);
  const auto next = train::epoch_batches(trainset, 1, cfg, tiny_defects());
  EXPECT_NE(next[0][0].cloud.points, a[0][0].cloud.points);
}

TEST(train_step, encoders_untouched_and_heads_move) {
  dp::PlaneModel model(tiny_model());
  train::TrainConfig cfg;
  auto opt = train::make_optimizer(model, cfg);
  const auto frozen = model.encoder_checksum();
  const auto head = dp::PlaneModel::parameter_checksum(model.trainable_parameters());
  const auto batches = train::epoch_batches(tiny_train(), 0, cfg, tiny_defects());
  const auto l = train::train_step(model, opt, batches[0], cfg);
  EXPECT_TRUE(std::isfinite(l.total));
  EXPECT_NEAR(l.total, l.focal + l.dice, 1e-12);
  EXPECT_EQ(model.encoder_checksum(), frozen);
  EXPECT_NE(dp::PlaneModel::parameter_checksum(model.trainable_parameters()), head);
  for (const auto& p : model.frozen_parameters()) EXPECT_FALSE(p.tensor.has_grad()) << p.name;
  for (const auto& p : model.trainable_parameters()) {
    double g = 0;
    for (double v : p.tensor.grad()) g += std::abs(v);
    EXPECT_GT(g, 0.0) << p.name;
  }
}

TEST(train_step, replay_from_checkpoint_is_bitwise) {
  train::TrainConfig cfg;
  const auto batches = train::epoch_batches(tiny_train(), 0, cfg, tiny_defects());
  auto run = [&](const ad::Checkpoint& start) {
    auto model = dp::PlaneModel::from_checkpoint(start);
    auto opt = train::make_optimizer(model, cfg);
    train::train_step(model, opt, batches[0], cfg);
    return dp::PlaneModel::parameter_checksum(model.trainable_parameters());
  };
  const dp::PlaneModel model(tiny_model());
  const auto ck = model.checkpoint();
  EXPECT_EQ(run(ck), run(ck));
}

TEST(train_step, fixed_batch_loss_decreases) {
  dp::PlaneModel model(tiny_model());
  train::TrainConfig cfg;
  cfg.lr_adapter = 1e-2;
  cfg.lr_prompts_dpcm = 1e-3;
  auto opt = train::make_optimizer(model, cfg);
  const auto batch = train::epoch_batches(tiny_train(), 0, cfg, tiny_defects())[0];
  const double first = train::train_step(model, opt, batch, cfg).total;
  double last = first;
  for (int i = 0; i < 30; ++i) last = train::train_step(model, opt, batch, cfg).total;
  EXPECT_LT(last, first);
}

TEST(fit, zero_epochs_history_and_periodic_checkpoints) {
  const auto trainset = tiny_train();
  dp::PlaneModel model(tiny_model());
  train::TrainConfig cfg;
  cfg.epochs = 0;
  const auto before = model.checkpoint();
  const auto r0 = train::fit(model, trainset, cfg, tiny_defects());
  EXPECT_TRUE(r0.history.empty());
  EXPECT_EQ(ad::serialize_checkpoint(r0.checkpoint), ad::serialize_checkpoint(before));

  const auto dir = fs::temp_directory_path() / "plane_fit_test";
  fs::remove_all(dir);
  cfg.epochs = 4;
  cfg.checkpoint_every = 2;
  cfg.checkpoint_dir = dir.string();
  std::size_t callbacks = 0;
  const auto r = train::fit(model, trainset, cfg, tiny_defects(), 1, [&](const train::EpochLoss&) { ++callbacks; });
  ASSERT_EQ(r.history.size(), 4u);
  EXPECT_EQ(callbacks, 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(r.history[i].epoch, i + 1);
    EXPECT_TRUE(std::isfinite(r.history[i].mean_loss));
  }
  EXPECT_TRUE(fs::exists(dir / "epoch_00002.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "epoch_00004.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "epoch_00003.ckpt"));
  EXPECT_EQ(r.checkpoint.meta.at("train").at("epochs"), 4);

  train::write_loss_csv(dir / "loss.csv", r.history);
  const auto csv = geom::detail::read_file(dir / "loss.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,mean_loss,focal,dice");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_THROW(train::fit(model, {}, cfg), Error);
}
