#pragma once

#include <map>
#include <string>
#include <vector>

#include "plane/plm/point_encoder.hpp"
#include "plane/plm/text_encoder.hpp"

namespace plane::dp {

using ad::Tensor;

struct HeadConfig {
  std::size_t text_prompt_len = 6;
  std::size_t point_prompt_len = 4;
  std::size_t dpcm_hidden = 128;
  double temperature = 1.0;   // multiplier on the cosines before the two-class softmax
  bool prompt_mixing = true;  // prompt-to-feature attention inside PCFA
  double text_prompt_std = 1.0;
  double point_prompt_std = 1.0;
  double adapter_out_std = 0.02;

  void validate() const {
    require(text_prompt_len >= 1 && point_prompt_len >= 1, "prompt lengths must be >= 1");
    require(dpcm_hidden >= 1, "dpcm_hidden must be >= 1");
    require(temperature > 0.0, "temperature must be positive");
  }
};

/// Learnable static prompts plus the dynamic prompt creator MLP.
struct PromptSet {
  Tensor text_normal;     // N_t x d
  Tensor text_anomalous;  // N_t x d
  std::map<std::string, Tensor> point_static;  // class -> M_p x d
  Tensor dpcm_w1, dpcm_b1, dpcm_w2, dpcm_b2;   // d -> hidden -> 2d

  PromptSet() = default;

  PromptSet(const HeadConfig& cfg, std::size_t dim, const std::vector<std::string>& classes, Rng& rng) {
    text_normal = Tensor::randn({cfg.text_prompt_len, dim}, rng, cfg.text_prompt_std, true);
    text_anomalous = Tensor::randn({cfg.text_prompt_len, dim}, rng, cfg.text_prompt_std, true);
    for (const auto& c : classes) {
      require(!point_static.count(c), "duplicate class: " + c);
      point_static[c] = Tensor::randn({cfg.point_prompt_len, dim}, rng, cfg.point_prompt_std, true);
    }
    dpcm_w1 = Tensor::randn({dim, cfg.dpcm_hidden}, rng, 1.0, true);
    dpcm_b1 = Tensor::randn({cfg.dpcm_hidden}, rng, 0.1, true);
    dpcm_w2 = Tensor::randn({cfg.dpcm_hidden, 2 * dim}, rng, 1.0 / std::sqrt(static_cast<double>(cfg.dpcm_hidden)), true);
    dpcm_b2 = Tensor::zeros({2 * dim}, true);
  }

  std::size_t dim() const { return text_normal.shape()[1]; }

  const Tensor& point_prompt(const std::string& cls) const {
    auto it = point_static.find(cls);
    if (it == point_static.end()) throw Error("unknown class: " + cls);
    return it->second;
  }

  void collect(std::vector<ad::Parameter>& out) const {
    out.push_back({"prompts.text_normal", text_normal, "prompts"});
    out.push_back({"prompts.text_anomalous", text_anomalous, "prompts"});
    for (const auto& [c, t] : point_static) out.push_back({"prompts.point." + c, t, "prompts"});
    out.push_back({"prompts.dpcm.w1", dpcm_w1, "prompts"});
    out.push_back({"prompts.dpcm.b1", dpcm_b1, "prompts"});
    out.push_back({"prompts.dpcm.w2", dpcm_w2, "prompts"});
    out.push_back({"prompts.dpcm.b2", dpcm_b2, "prompts"});
  }
};

/// Token-wise FFN for one tap layer: d -> 4d -> d.
struct PcfaAdapter {
  Tensor w1, b1, w2, b2;

  PcfaAdapter() = default;

  PcfaAdapter(std::size_t dim, double out_std, Rng& rng) {
    w1 = Tensor::randn({dim, 4 * dim}, rng, 1.0 / std::sqrt(static_cast<double>(dim)), true);
    b1 = Tensor::zeros({4 * dim}, true);
    w2 = Tensor::randn({4 * dim, dim}, rng, out_std, true);
    b2 = Tensor::zeros({dim}, true);
  }

  Tensor forward(const Tensor& x) const { return ad::linear(ad::gelu(ad::linear(x, w1, b1)), w2, b2); }

  void collect(const std::string& prefix, std::vector<ad::Parameter>& out) const {
    out.push_back({prefix + "w1", w1, "adapter"});
    out.push_back({prefix + "b1", b1, "adapter"});
    out.push_back({prefix + "w2", w2, "adapter"});
    out.push_back({prefix + "b2", b2, "adapter"});
  }
};

struct DynamicPrompts {
  Tensor text;   // 1 x d
  Tensor point;  // 1 x d
};

/// Global point feature -> (dynamic text prompt, dynamic point prompt).
inline DynamicPrompts dpcm(const Tensor& f_pc, const PromptSet& prompts) {
  const std::size_t d = prompts.dim();
  const Tensor x = f_pc.ndim() == 1 ? ad::reshape(f_pc, {1, f_pc.numel()}) : f_pc;
  if (x.shape() != ad::Shape{1, d}) throw Error("dpcm expects a 1 x " + std::to_string(d) + " feature");
  const Tensor h = ad::gelu(ad::linear(x, prompts.dpcm_w1, prompts.dpcm_b1));
  const Tensor out = ad::linear(h, prompts.dpcm_w2, prompts.dpcm_b2);
  return {ad::slice(out, 1, 0, d), ad::slice(out, 1, d, 2 * d)};
}

struct TextFeatures {
  Tensor normal;     // 1 x d, unit norm
  Tensor anomalous;  // 1 x d, unit norm
};

/// [static prompts][dynamic prompt][class words] through the frozen text encoder.
inline TextFeatures build_text_features(const plm::TextEncoder& enc, const PromptSet& prompts,
                                        const Tensor& f_d_text, const std::string& class_name) {
  const Tensor words = enc.embed_text(class_name);
  return {enc.encode(ad::concat({prompts.text_normal, f_d_text, words}, 0)),
          enc.encode(ad::concat({prompts.text_anomalous, f_d_text, words}, 0))};
}

/// Projects one tap layer's tokens into the text space. Only the trailing
/// G rows of the prompt-extended sequence are returned.
inline Tensor pcfa_project(const Tensor& f_ori, const Tensor& point_static, const Tensor& f_d_point,
                           const PcfaAdapter& adapter, bool mixing = true) {
  const std::size_t d = adapter.w1.shape()[0];
  if (f_ori.ndim() != 2 || f_ori.shape()[1] != d || point_static.ndim() != 2 || point_static.shape()[1] != d ||
      f_d_point.numel() != d)
    throw Error("pcfa_project: width mismatch (adapter width " + std::to_string(d) + ")");
  const std::size_t g = f_ori.shape()[0];
  const Tensor prompt_tokens = ad::concat({point_static, ad::reshape(f_d_point, {1, d})}, 0);
  Tensor z = ad::layernorm(f_ori);
  if (mixing) {
    const Tensor att =
        ad::softmax(ad::scale(ad::matmul(z, ad::transpose(prompt_tokens)), 1.0 / std::sqrt(static_cast<double>(d))), 1);
    z = ad::add(z, ad::matmul(att, prompt_tokens));
  }
  const Tensor seq = ad::concat({prompt_tokens, z}, 0);
  const Tensor h = adapter.forward(seq);
  const std::size_t total = seq.shape()[0];
  return ad::add(f_ori, ad::slice(h, 0, total - g, total));
}

/// Anomalous-class probability of a two-way softmax over (logit_n, logit_a), per row.
inline Tensor two_class_scores(const Tensor& logit_n, const Tensor& logit_a) {
  const std::size_t g = logit_n.numel();
  require(logit_a.numel() == g, "two_class_scores: length mismatch");
  const Tensor both = ad::concat({ad::reshape(logit_n, {g, 1}), ad::reshape(logit_a, {g, 1})}, 1);
  return ad::reshape(ad::slice(ad::softmax(both, 1), 1, 1, 2), {g});
}

/// Per-token anomaly scores from cosines against the two text features.
inline Tensor token_scores(const Tensor& f_p, const TextFeatures& text, double temperature = 1.0) {
  const Tensor cos_n = ad::cosine_similarity(f_p, text.normal, 1);
  const Tensor cos_a = ad::cosine_similarity(f_p, text.anomalous, 1);
  return two_class_scores(ad::scale(cos_n, temperature), ad::scale(cos_a, temperature));
}

/// Token scores -> per-point scores by the patch inverse-distance weights.
inline Tensor interpolate_scores(const Tensor& token, const plm::Patches& p) {
  const std::size_t n = p.interp_index.size();
  const std::size_t g = p.centers.size();
  require(token.numel() == g, "interpolate_scores: score count does not match group count");
  const std::size_t m = p.interp_count;
  std::vector<double> out(n, 0.0);
  const auto& s = token.node()->data;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i] += p.interp_weight[i][j] * s[p.interp_index[i][j]];
  return ad::detail::make_result({n}, std::move(out), {token},
                                 [idx = p.interp_index, w = p.interp_weight, m, n](ad::detail::Node& self) {
    auto& gr = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gr[idx[i][j]] += w[i][j] * self.grad[i];
  });
}

struct AnomalyMap {
  std::vector<double> point_scores;
  double object_score = 0.0;
  std::vector<std::vector<double>> per_layer;
};

/// Mean over layers; object score is the maximum point score.
inline Tensor aggregate(const std::vector<Tensor>& layer_maps) {
  if (layer_maps.empty()) throw Error("aggregate: no layer maps");
  Tensor acc = layer_maps[0];
  for (std::size_t i = 1; i < layer_maps.size(); ++i) {
    if (layer_maps[i].shape() != acc.shape()) throw Error("aggregate: layer maps differ in length");
    acc = ad::add(acc, layer_maps[i]);
  }
  return layer_maps.size() == 1 ? acc : ad::scale(acc, 1.0 / static_cast<double>(layer_maps.size()));
}

inline AnomalyMap aggregate_maps(const std::vector<std::vector<double>>& layer_maps) {
  if (layer_maps.empty()) throw Error("aggregate: no layer maps");
  std::vector<Tensor> ts;
  for (const auto& m : layer_maps) ts.emplace_back(ad::Shape{m.size()}, m);
  AnomalyMap out;
  const Tensor agg = aggregate(ts);
  out.point_scores.assign(agg.data().begin(), agg.data().end());
  require(!out.point_scores.empty(), "aggregate: empty maps");
  out.object_score = *std::max_element(out.point_scores.begin(), out.point_scores.end());
  out.per_layer = layer_maps;
  return out;
}

}  // namespace plane::dp
