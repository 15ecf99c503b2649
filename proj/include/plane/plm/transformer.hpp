#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "plane/autodiff/ops.hpp"
#include "plane/autodiff/optim.hpp"

namespace plane::plm {

using ad::Tensor;

/// Frozen pre-norm transformer block: x + MHA(LN(x)), then x + MLP(LN(x)).
struct TransformerBlock {
  std::size_t dim = 0, heads = 0;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo, w1, b1, w2, b2;

  TransformerBlock() = default;

  TransformerBlock(std::size_t dim_, std::size_t heads_, std::size_t depth, Rng& rng, double residual_gain = 1.0)
      : dim(dim_), heads(heads_) {
    require(dim % heads == 0, "transformer dim must be divisible by heads");
    const double in_std = 1.0 / std::sqrt(static_cast<double>(dim));
    const double out_std = residual_gain * in_std / std::sqrt(2.0 * static_cast<double>(depth));
    const double hid_std =
        residual_gain / std::sqrt(4.0 * static_cast<double>(dim)) / std::sqrt(2.0 * static_cast<double>(depth));
    wq = Tensor::randn({dim, dim}, rng, in_std);
    wk = Tensor::randn({dim, dim}, rng, in_std);
    wv = Tensor::randn({dim, dim}, rng, in_std);
    wo = Tensor::randn({dim, dim}, rng, out_std);
    w1 = Tensor::randn({dim, 4 * dim}, rng, in_std);
    w2 = Tensor::randn({4 * dim, dim}, rng, hid_std);
    bq = Tensor::randn({dim}, rng, 0.02);
    bk = Tensor::randn({dim}, rng, 0.02);
    bv = Tensor::randn({dim}, rng, 0.02);
    bo = Tensor::randn({dim}, rng, 0.02);
    b1 = Tensor::randn({4 * dim}, rng, 0.02);
    b2 = Tensor::randn({dim}, rng, 0.02);
  }

  /// Bidirectional self-attention over the rows of x (L x dim).
  Tensor forward(const Tensor& x) const {
    const Tensor h = ad::layernorm(x);
    const Tensor q = ad::linear(h, wq, bq), k = ad::linear(h, wk, bk), v = ad::linear(h, wv, bv);
    const std::size_t dh = dim / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t i = 0; i < heads; ++i) {
      const Tensor qh = ad::slice(q, 1, i * dh, (i + 1) * dh);
      const Tensor kh = ad::slice(k, 1, i * dh, (i + 1) * dh);
      const Tensor vh = ad::slice(v, 1, i * dh, (i + 1) * dh);
      const Tensor att = ad::softmax(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv), 1);
      outs.push_back(ad::matmul(att, vh));
    }
    const Tensor attn = ad::linear(heads == 1 ? outs[0] : ad::concat(outs, 1), wo, bo);
    const Tensor x1 = ad::add(x, attn);
    const Tensor mlp = ad::linear(ad::gelu(ad::linear(ad::layernorm(x1), w1, b1)), w2, b2);
    return ad::add(x1, mlp);
  }

  void collect(const std::string& prefix, std::vector<ad::Parameter>& out) const {
    const std::pair<const char*, const Tensor*> named[] = {{"wq", &wq}, {"bq", &bq}, {"wk", &wk}, {"bk", &bk},
                                                           {"wv", &wv}, {"bv", &bv}, {"wo", &wo}, {"bo", &bo},
                                                           {"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}};
    for (const auto& [n, t] : named) out.push_back({prefix + n, *t, "frozen"});
  }
};

}  // namespace plane::plm
