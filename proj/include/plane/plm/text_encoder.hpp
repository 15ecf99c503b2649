#pragma once

#include <string>
#include <vector>

#include "plane/plm/tokenizer.hpp"
#include "plane/plm/transformer.hpp"

namespace plane::plm {

struct TextEncoderConfig {
  std::size_t dim = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t max_len = 16;
  double residual_gain = 4.0;  // scales the residual branches so prompts reach the final position

  void validate() const {
    require(dim % heads == 0, "TextEncoderConfig: dim must be divisible by heads");
    require(layers >= 1 && max_len >= 1, "TextEncoderConfig: layers and max_len must be >= 1");
  }
};

/// Frozen text transformer over continuous embedding sequences. Weights
/// never require grad, but gradients flow through it to its inputs.
class TextEncoder {
 public:
  TextEncoder() = default;

  TextEncoder(const TextEncoderConfig& cfg, Tokenizer tokenizer, std::uint64_t seed)
      : cfg_(cfg), tokenizer_(std::move(tokenizer)) {
    cfg_.validate();
    Rng rng(mix_seed(seed, 0x7E47));
    token_embedding_ = Tensor::randn({tokenizer_.size(), cfg_.dim}, rng, 1.0);
    position_embedding_ = Tensor::randn({cfg_.max_len, cfg_.dim}, rng, 0.2);
    for (std::size_t i = 0; i < cfg_.layers; ++i) blocks_.emplace_back(cfg_.dim, cfg_.heads, cfg_.layers, rng, cfg_.residual_gain);
  }

  const TextEncoderConfig& config() const { return cfg_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }

  /// Frozen embeddings of the words of `text` (rows x dim).
  Tensor embed_text(const std::string& text) const {
    const auto ids = tokenizer_.tokenize(text);
    require(!ids.empty(), "text must be nonempty");
    return ad::index_rows(token_embedding_, ids);
  }

  /// L x dim embeddings -> unit-norm 1 x dim feature taken at the final position.
  Tensor encode(const Tensor& sequence) const {
    if (sequence.ndim() != 2 || sequence.shape()[1] != cfg_.dim)
      throw Error("text_encode expects L x " + std::to_string(cfg_.dim) + " input, got " +
                  ad::shape_str(sequence.shape()));
    const std::size_t len = sequence.shape()[0];
    if (len == 0 || len > cfg_.max_len)
      throw Error("text sequence length " + std::to_string(len) + " exceeds max_len " + std::to_string(cfg_.max_len));
    Tensor x = ad::add(sequence, ad::slice(position_embedding_, 0, 0, len));
    for (const auto& b : blocks_) x = b.forward(x);
    const Tensor last = ad::slice(ad::layernorm(x), 0, len - 1, len);
    return ad::l2_normalize(last, -1);
  }

  std::vector<ad::Parameter> parameters() const {
    std::vector<ad::Parameter> out{{"text.token_embedding", token_embedding_, "frozen"},
                                   {"text.position_embedding", position_embedding_, "frozen"}};
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("text.block" + std::to_string(i) + ".", out);
    return out;
  }

 private:
  TextEncoderConfig cfg_;
  Tokenizer tokenizer_;
  Tensor token_embedding_, position_embedding_;
  std::vector<TransformerBlock> blocks_;
};

}  // namespace plane::plm
