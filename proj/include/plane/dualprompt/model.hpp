#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <string>
#include <vector>

#include "plane/autodiff/checkpoint.hpp"
#include "plane/core/digest.hpp"
#include "plane/dualprompt/head.hpp"

namespace plane::dp {

using geom::PointCloud;

struct ModelConfig {
  plm::TextEncoderConfig text;
  plm::PointEncoderConfig point;
  HeadConfig head;
  std::vector<std::string> categories;
  std::uint64_t encoder_seed = 2024;
  std::uint64_t seed = 0;  // head initialization

  void validate() const {
    text.validate();
    point.validate();
    head.validate();
    require(!categories.empty(), "model needs at least one category");
    require(text.dim == point.dim, "text and point widths must match");
    require(head.text_prompt_len + 1 + 1 <= text.max_len, "text prompt length leaves no room for the class name");
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"text", {{"dim", c.text.dim}, {"layers", c.text.layers}, {"heads", c.text.heads}, {"max_len", c.text.max_len},
            {"residual_gain", c.text.residual_gain}}},
          {"point",
           {{"groups", c.point.groups},
            {"group_size", c.point.group_size},
            {"dim", c.point.dim},
            {"layers", c.point.layers},
            {"heads", c.point.heads},
            {"tap_layers", c.point.tap_layers},
            {"canonical_frames", c.point.canonical_frames},
            {"normalize_input", c.point.normalize_input}}},
          {"head",
           {{"text_prompt_len", c.head.text_prompt_len},
            {"point_prompt_len", c.head.point_prompt_len},
            {"dpcm_hidden", c.head.dpcm_hidden},
            {"temperature", c.head.temperature},
            {"prompt_mixing", c.head.prompt_mixing},
            {"text_prompt_std", c.head.text_prompt_std},
            {"point_prompt_std", c.head.point_prompt_std},
            {"adapter_out_std", c.head.adapter_out_std}}},
          {"categories", c.categories},
          {"encoder_seed", c.encoder_seed},
          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto& t = j.at("text");
  c.text.dim = t.at("dim");
  c.text.layers = t.at("layers");
  c.text.heads = t.at("heads");
  c.text.max_len = t.at("max_len");
  c.text.residual_gain = t.value("residual_gain", 4.0);
  const auto& p = j.at("point");
  c.point.groups = p.at("groups");
  c.point.group_size = p.at("group_size");
  c.point.dim = p.at("dim");
  c.point.layers = p.at("layers");
  c.point.heads = p.at("heads");
  c.point.tap_layers = p.at("tap_layers").get<std::vector<std::size_t>>();
  c.point.canonical_frames = p.value("canonical_frames", true);
  c.point.normalize_input = p.value("normalize_input", true);
  const auto& h = j.at("head");
  c.head.text_prompt_len = h.at("text_prompt_len");
  c.head.point_prompt_len = h.at("point_prompt_len");
  c.head.dpcm_hidden = h.at("dpcm_hidden");
  c.head.temperature = h.at("temperature");
  c.head.prompt_mixing = h.at("prompt_mixing");
  c.head.text_prompt_std = h.value("text_prompt_std", 1.0);
  c.head.point_prompt_std = h.value("point_prompt_std", 1.0);
  c.head.adapter_out_std = h.value("adapter_out_std", 0.02);
  c.categories = j.at("categories").get<std::vector<std::string>>();
  c.encoder_seed = j.at("encoder_seed");
  c.seed = j.at("seed");
  return c;
}

/// Wall-clock seconds spent per stage of one forward pass.
struct StageTimes {
  double encode = 0.0, head = 0.0, interp = 0.0;
};

struct Forward {
  Tensor point_scores;               // N, mean over taps
  std::vector<Tensor> layer_scores;  // per tap, N
  TextFeatures text;
  plm::EncodedPointCloud encoded;
};

/// Frozen point/text encoders plus the trainable prompt head.
class PlaneModel {
 public:
  explicit PlaneModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    text_ = plm::TextEncoder(cfg_.text, plm::Tokenizer(cfg_.categories), cfg_.encoder_seed);
    point_ = plm::PointEncoder(cfg_.point, cfg_.encoder_seed);
    Rng rng(mix_seed(cfg_.seed, 0xD0A1));
    prompts_ = PromptSet(cfg_.head, cfg_.point.dim, cfg_.categories, rng);
    for (std::size_t i = 0; i < cfg_.point.tap_layers.size(); ++i)
      adapters_.emplace_back(cfg_.point.dim, cfg_.head.adapter_out_std, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const plm::TextEncoder& text_encoder() const { return text_; }
  const plm::PointEncoder& point_encoder() const { return point_; }
  const PromptSet& prompts() const { return prompts_; }
  const std::vector<PcfaAdapter>& adapters() const { return adapters_; }

  plm::EncodedPointCloud encode(const PointCloud& cloud) const {
    ad::NoGradGuard guard;
    return point_.encode(cloud);
  }

  TextFeatures text_features(const plm::EncodedPointCloud& enc, const std::string& cls) const {
    const auto dyn = dpcm(enc.global_feature, prompts_);
    return build_text_features(text_, prompts_, dyn.text, cls);
  }

  /// Full differentiable head pass.
  Forward forward(const PointCloud& cloud, const std::string& cls, StageTimes* times = nullptr) const {
    using clock = std::chrono::steady_clock;
    auto t0 = clock::now();
    Forward out;
    out.encoded = encode(cloud);
    auto t1 = clock::now();
    std::vector<Tensor> token;
    const auto dyn = dpcm(out.encoded.global_feature, prompts_);
    out.text = build_text_features(text_, prompts_, dyn.text, cls);
    const Tensor& p_sta = prompts_.point_prompt(cls);
    for (std::size_t i = 0; i < adapters_.size(); ++i) {
      const Tensor f_p = pcfa_project(out.encoded.intermediate[i], p_sta, dyn.point, adapters_[i], cfg_.head.prompt_mixing);
      token.push_back(token_scores(f_p, out.text, cfg_.head.temperature));
    }
    auto t2 = clock::now();
    for (const auto& s : token) out.layer_scores.push_back(interpolate_scores(s, out.encoded.patches));
    out.point_scores = aggregate(out.layer_scores);
    auto t3 = clock::now();
    if (times) {
      times->encode = std::chrono::duration<double>(t1 - t0).count();
      times->head = std::chrono::duration<double>(t2 - t1).count();
      times->interp = std::chrono::duration<double>(t3 - t2).count();
    }
    return out;
  }

  AnomalyMap infer(const PointCloud& cloud, const std::string& cls, StageTimes* times = nullptr) const {
    ad::NoGradGuard guard;
    const Forward f = forward(cloud, cls, times);
    AnomalyMap m;
    m.point_scores.assign(f.point_scores.data().begin(), f.point_scores.data().end());
    m.object_score = *std::max_element(m.point_scores.begin(), m.point_scores.end());
    for (const auto& l : f.layer_scores) m.per_layer.emplace_back(l.data().begin(), l.data().end());
    return m;
  }

  /// Prompts, DPCM and PCFA adapters; everything Adam is allowed to touch.
  std::vector<ad::Parameter> trainable_parameters() const {
    std::vector<ad::Parameter> out;
    prompts_.collect(out);
    for (std::size_t i = 0; i < adapters_.size(); ++i)
      adapters_[i].collect("pcfa." + std::to_string(cfg_.point.tap_layers[i]) + ".", out);
    return out;
  }

  std::vector<ad::Parameter> frozen_parameters() const {
    auto out = text_.parameters();
    auto p = point_.parameters();
    out.insert(out.end(), p.begin(), p.end());
    return out;
  }

  std::string encoder_checksum() const { return parameter_checksum(frozen_parameters()); }

  static std::string parameter_checksum(const std::vector<ad::Parameter>& params) {
    std::string bytes;
    for (const auto& p : params) {
      bytes += p.name;
      bytes.push_back('\0');
      const auto d = p.tensor.data();
      bytes.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double));
    }
    return sha256_hex(bytes);
  }

  ad::Checkpoint checkpoint() const {
    nlohmann::json meta = {{"kind", "plane-model"}, {"config", to_json(cfg_)}, {"encoder_sha256", encoder_checksum()}};
    if (!encoder_weights_.empty()) meta["encoder_weights"] = encoder_weights_;
    return ad::to_checkpoint(trainable_parameters(), meta);
  }

  void save(const std::filesystem::path& path) const { ad::save_checkpoint(path, checkpoint()); }

  static PlaneModel from_checkpoint(const ad::Checkpoint& ck) {
    if (ck.meta.value("kind", "") != "plane-model") throw Error("not a model checkpoint");
    PlaneModel m(model_config_from_json(ck.meta.at("config")));
    if (ck.meta.contains("encoder_weights")) {
      m.load_encoder_weights(ck.meta.at("encoder_weights").get<std::string>());
    }
    if (m.encoder_checksum() != ck.meta.at("encoder_sha256").get<std::string>())
      throw Error("encoder weights do not match the checkpoint");
    auto params = m.trainable_parameters();
    ad::load_into(ck, params);
    return m;
  }

  static PlaneModel load(const std::filesystem::path& path) { return from_checkpoint(ad::load_checkpoint(path)); }

  /// Replaces the frozen encoder weights with externally supplied ones.
  void load_encoder_weights(const std::filesystem::path& path) {
    auto frozen = frozen_parameters();
    ad::load_into(ad::load_checkpoint(path), frozen);
    encoder_weights_ = std::filesystem::absolute(path).string();
  }

  void save_encoder_weights(const std::filesystem::path& path) const {
    ad::save_checkpoint(path, ad::to_checkpoint(frozen_parameters(), {{"kind", "plane-encoders"}, {"config", to_json(cfg_)}}));
  }

 private:
  ModelConfig cfg_;
  plm::TextEncoder text_;
  plm::PointEncoder point_;
  PromptSet prompts_;
  std::vector<PcfaAdapter> adapters_;
  std::string encoder_weights_;
};

/// Cosine distance 1 - cos(F_N_T, F_A_T).
inline double text_separation(const TextFeatures& t) {
  double dot = 0.0;
  for (std::size_t i = 0; i < t.normal.numel(); ++i) dot += t.normal[i] * t.anomalous[i];
  return 1.0 - dot;
}

}  // namespace plane::dp
