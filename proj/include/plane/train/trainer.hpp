#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "plane/ano3d/ano3d.hpp"
#include "plane/dataset/dataset.hpp"
#include "plane/dualprompt/model.hpp"
#include "plane/train/losses.hpp"

namespace plane::train {

enum class LossMode { both, focal, dice };

inline std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::focal: return "focal";
    case LossMode::dice: return "dice";
    default: return "both";
  }
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "both" || s == "focal+dice") return LossMode::both;
  if (s == "focal") return LossMode::focal;
  if (s == "dice") return LossMode::dice;
  throw Error("unknown loss mode: " + s);
}

struct TrainConfig {
  std::size_t epochs = 1400;
  std::size_t batch_size = 4;
  double lr_adapter = 1e-4;
  double lr_prompts_dpcm = 1e-5;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double dice_smooth = 1.0;
  double anomaly_ratio = 0.75;  // pseudo-anomalous share of each batch
  LossMode loss = LossMode::both;
  std::size_t checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints
  std::string checkpoint_dir;
  std::uint64_t seed = 0;

  void validate() const {
    require(batch_size >= 1, "batch_size must be positive");
    require(lr_adapter > 0.0 && lr_prompts_dpcm > 0.0, "learning rates must be positive");
    require(focal_gamma >= 0.0, "focal_gamma must be >= 0");
    require(focal_alpha > 0.0 && focal_alpha < 1.0, "focal_alpha must lie in (0,1)");
    require(dice_smooth > 0.0, "dice_smooth must be positive");
    require(anomaly_ratio >= 0.0 && anomaly_ratio <= 1.0, "anomaly_ratio must lie in [0,1]");
    require(checkpoint_every == 0 || !checkpoint_dir.empty(), "checkpoint_every needs checkpoint_dir");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr_adapter", c.lr_adapter},
          {"lr_prompts_dpcm", c.lr_prompts_dpcm},
          {"focal_gamma", c.focal_gamma},
          {"focal_alpha", c.focal_alpha},
          {"dice_smooth", c.dice_smooth},
          {"anomaly_ratio", c.anomaly_ratio},
          {"loss", to_string(c.loss)},
          {"checkpoint_every", c.checkpoint_every},
          {"checkpoint_dir", c.checkpoint_dir},
          {"seed", c.seed}};
}

namespace detail {

inline void set_train_key(TrainConfig& c, const std::string& key, const std::string& value) {
  auto num = [&] {
    std::size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(value, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != value.size()) throw Error("invalid value for " + key + ": " + value);
    return v;
  };
  auto count = [&] {
    const double v = num();
    if (v < 0 || v != std::floor(v)) throw Error("invalid value for " + key + ": " + value);
    return static_cast<std::size_t>(v);
  };
  if (key == "epochs") c.epochs = count();
  else if (key == "batch_size" || key == "batch") c.batch_size = count();
  else if (key == "lr_adapter") c.lr_adapter = num();
  else if (key == "lr_prompts_dpcm" || key == "lr_prompts") c.lr_prompts_dpcm = num();
  else if (key == "focal_gamma") c.focal_gamma = num();
  else if (key == "focal_alpha") c.focal_alpha = num();
  else if (key == "dice_smooth") c.dice_smooth = num();
  else if (key == "anomaly_ratio") c.anomaly_ratio = num();
  else if (key == "loss") c.loss = parse_loss_mode(value);
  else if (key == "checkpoint_every") c.checkpoint_every = count();
  else if (key == "checkpoint_dir") c.checkpoint_dir = value;
  else if (key == "seed") c.seed = std::stoull(value);
  else throw Error("unknown training config key: " + key);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

}  // namespace detail

/// Accepts a JSON object or flat key=value lines ('#' starts a comment).
inline TrainConfig parse_train_config(const std::string& text, TrainConfig base = {}) {
  const std::string t = detail::trim(text);
  if (!t.empty() && t.front() == '{') {
    const auto j = nlohmann::json::parse(t);
    for (const auto& [k, v] : j.items()) {
      if (v.is_string()) detail::set_train_key(base, k, v.get<std::string>());
      else if (v.is_number_unsigned()) detail::set_train_key(base, k, std::to_string(v.get<std::uint64_t>()));
      else detail::set_train_key(base, k, v.dump());
    }
  } else {
    std::istringstream in(t);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = detail::trim(line.substr(0, line.find('#')));
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected key=value");
      detail::set_train_key(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
  }
  base.validate();
  return base;
}

inline TrainConfig read_train_config(const std::filesystem::path& path, TrainConfig base = {}) {
  return parse_train_config(geom::detail::read_file(path), base);
}

struct LossParts {
  double total = 0.0, focal = 0.0, dice = 0.0;
};

/// One training example: cloud, its per-point mask, and its class.
struct TrainItem {
  geom::PointCloud cloud;
  std::vector<std::uint8_t> mask;
  std::string category;
};

/// Differentiable loss for one predicted map.
inline Tensor sample_loss(const Tensor& pred, const std::vector<std::uint8_t>& mask, const TrainConfig& cfg,
                          LossParts* parts = nullptr) {
  const Tensor gt = mask_tensor(mask);
  Tensor f, d;
  if (cfg.loss != LossMode::dice) f = focal_loss(pred, gt, cfg.focal_alpha, cfg.focal_gamma);
  if (cfg.loss != LossMode::focal) d = dice_loss(pred, gt, cfg.dice_smooth);
  if (parts) {
    parts->focal = f.defined() ? f.item() : 0.0;
    parts->dice = d.defined() ? d.item() : 0.0;
  }
  Tensor total = f.defined() && d.defined() ? ad::add(f, d) : (f.defined() ? f : d);
  if (parts) parts->total = total.item();
  return total;
}

inline ad::Adam make_optimizer(const dp::PlaneModel& model, const TrainConfig& cfg) {
  auto params = model.trainable_parameters();
  std::size_t expected = 0;
  for (const auto& p : params) {
    const bool ok = p.name.rfind("prompts.", 0) == 0 || p.name.rfind("pcfa.", 0) == 0;
    require(ok, "unexpected trainable parameter: " + p.name);
    expected += p.tensor.numel();
  }
  ad::Adam opt(std::move(params), {{"adapter", cfg.lr_adapter}, {"prompts", cfg.lr_prompts_dpcm}});
  require(opt.parameter_count() == expected, "trainable parameter count mismatch");
  return opt;
}

/// Forward, loss, backward and one Adam step over a batch. Returns batch means.
inline LossParts train_step(const dp::PlaneModel& model, ad::Adam& opt, const std::vector<TrainItem>& batch,
                            const TrainConfig& cfg) {
  require(!batch.empty(), "train_step: empty batch");
  opt.zero_grad();
  LossParts mean;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& item : batch) {
    require(item.mask.size() == item.cloud.size(), "train_step: mask size does not match cloud");
    const auto fwd = model.forward(item.cloud, item.category);
    LossParts p;
    const Tensor loss = sample_loss(fwd.point_scores, item.mask, cfg, &p);
    if (!std::isfinite(p.total)) throw Error("non-finite loss");
    ad::backward(ad::scale(loss, inv));
    mean.total += p.total * inv;
    mean.focal += p.focal * inv;
    mean.dice += p.dice * inv;
  }
  opt.step();
  return mean;
}

struct EpochLoss {
  std::size_t epoch = 0;
  double mean_loss = 0.0, focal = 0.0, dice = 0.0;
};

struct FitResult {
  ad::Checkpoint checkpoint;
  std::vector<EpochLoss> history;
};

/// Fresh augmentation of one normal training sample for a given epoch slot.
inline TrainItem augment_item(const dataset::Sample& s, bool anomalous, const ano3d::AnomalyConfig& base,
                              std::uint64_t seed) {
  ano3d::AnomalyConfig cfg = base;
  if (!anomalous) cfg.defect_type = ano3d::DefectType::none;
  auto r = ano3d::ano3d_augment(s.cloud, cfg, seed);
  TrainItem item;
  item.mask = r.cloud.labels ? *r.cloud.labels : r.mask;
  item.cloud = std::move(r.cloud);
  item.category = s.category;
  return item;
}

/// Batches for one epoch: shuffled order, the first round(B*ratio) slots of
/// each batch get a pseudo-anomaly and the rest a plain rotation.
inline std::vector<std::vector<TrainItem>> epoch_batches(const std::vector<dataset::Sample>& train, std::size_t epoch,
                                                         const TrainConfig& cfg, const ano3d::AnomalyConfig& ano,
                                                         std::size_t workers = 1) {
  Rng rng(mix_seed(mix_seed(cfg.seed, 0xE90C), epoch));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  std::vector<std::vector<TrainItem>> batches;
  for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
    const std::size_t size = std::min(cfg.batch_size, order.size() - b);
    const auto n_anom = static_cast<std::size_t>(std::llround(static_cast<double>(size) * cfg.anomaly_ratio));
    std::vector<TrainItem> batch(size);
    parallel_for(size, workers, [&](std::size_t j) {
      const std::uint64_t s = mix_seed(mix_seed(cfg.seed, epoch + 1), b + j + 1);
      batch[j] = augment_item(train[order[b + j]], j < n_anom, ano, s);
    });
    batches.push_back(std::move(batch));
  }
  return batches;
}

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochLoss>& history) {
  std::string out = "epoch,mean_loss,focal,dice\n";
  for (const auto& e : history)
    out += std::to_string(e.epoch) + "," + geom::detail::fmt_double(e.mean_loss) + "," +
           geom::detail::fmt_double(e.focal) + "," + geom::detail::fmt_double(e.dice) + "\n";
  geom::detail::write_file(path, out);
}

using EpochCallback = std::function<void(const EpochLoss&)>;

/// Trains the model's prompts and adapters in place.
inline FitResult fit(dp::PlaneModel& model, const std::vector<dataset::Sample>& train, const TrainConfig& cfg,
                     const ano3d::AnomalyConfig& ano = {}, std::size_t workers = 1, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  ano.validate();
  require(!train.empty(), "fit: empty training split");
  FitResult res;
  if (cfg.epochs == 0) {
    res.checkpoint = model.checkpoint();
    return res;
  }
  auto opt = make_optimizer(model, cfg);
  if (cfg.checkpoint_every) std::filesystem::create_directories(cfg.checkpoint_dir);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLoss e;
    e.epoch = epoch + 1;
    std::size_t n = 0;
    for (const auto& batch : epoch_batches(train, epoch, cfg, ano, workers)) {
      const auto l = train_step(model, opt, batch, cfg);
      e.mean_loss += l.total * static_cast<double>(batch.size());
      e.focal += l.focal * static_cast<double>(batch.size());
      e.dice += l.dice * static_cast<double>(batch.size());
      n += batch.size();
    }
    e.mean_loss /= static_cast<double>(n);
    e.focal /= static_cast<double>(n);
    e.dice /= static_cast<double>(n);
    res.history.push_back(e);
    if (on_epoch) on_epoch(e);
    if (cfg.checkpoint_every && e.epoch % cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "epoch_%05zu.ckpt", e.epoch);
      model.save(std::filesystem::path(cfg.checkpoint_dir) / name);
    }
  }
  auto meta_ck = model.checkpoint();
  meta_ck.meta["train"] = to_json(cfg);
  res.checkpoint = std::move(meta_ck);
  return res;
}

}  // namespace plane::train
