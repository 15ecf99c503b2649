#pragma once

#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "plane/autodiff/tensor.hpp"

namespace plane::ad {

/// A trainable tensor registered under a unique name and a learning-rate group.
struct Parameter {
  std::string name;
  Tensor tensor;
  std::string group;
};

struct AdamState {
  std::vector<double> m, v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of `param` in place.
inline void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (state.m.size() != param.size()) state.m.assign(param.size(), 0.0);
  if (state.v.size() != param.size()) state.v.assign(param.size(), 0.0);
  if (grad.size() != param.size()) throw Error("adam_step: gradient size mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

/// Adam over named parameters with one learning rate per group.
class Adam {
 public:
  Adam(std::vector<Parameter> params, std::map<std::string, double> group_lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(std::move(group_lr)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    std::set<std::string> names;
    for (const auto& p : params_) {
      if (!names.insert(p.name).second) throw Error("duplicate parameter name: " + p.name);
      if (!p.tensor.requires_grad()) throw Error("parameter does not require grad: " + p.name);
      if (!lr_.count(p.group)) throw Error("no learning rate for group '" + p.group + "' (" + p.name + ")");
    }
    state_.resize(params_.size());
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      std::vector<double> zeros;
      std::span<const double> g = p.tensor.grad();
      if (g.empty()) {
        zeros.assign(p.tensor.numel(), 0.0);
        g = zeros;
      }
      adam_step(p.tensor.mutable_data(), g, state_[i], lr_.at(p.group), beta1_, beta2_, eps_);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  double lr(const std::string& group) const { return lr_.at(group); }
  const std::vector<Parameter>& params() const { return params_; }
  const std::vector<AdamState>& state() const { return state_; }
  std::vector<AdamState>& state() { return state_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, double> lr_;
  double beta1_, beta2_, eps_;
  std::vector<AdamState> state_;
};

}  // namespace plane::ad
