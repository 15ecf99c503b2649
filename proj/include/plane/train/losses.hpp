#pragma once

#include <vector>

#include "plane/autodiff/ops.hpp"

namespace plane::train {

using ad::Tensor;

inline constexpr double kProbClamp = 1e-7;

inline Tensor mask_tensor(const std::vector<std::uint8_t>& gt) {
  std::vector<double> v(gt.begin(), gt.end());
  return Tensor({gt.size()}, std::move(v));
}

/// Mean focal loss; anomalous points weighted alpha, normal points 1 - alpha.
inline Tensor focal_loss(const Tensor& pred, const Tensor& gt, double alpha = 0.25, double gamma = 2.0) {
  require(pred.numel() == gt.numel(), "focal_loss: prediction and mask sizes differ");
  const Tensor p = ad::clamp(pred, kProbClamp, 1.0 - kProbClamp);
  const Tensor inv_gt = ad::rsub_scalar(1.0, gt);
  const Tensor p_t = ad::add(ad::mul(gt, p), ad::mul(inv_gt, ad::rsub_scalar(1.0, p)));
  const Tensor w = ad::add(ad::scale(gt, alpha), ad::scale(inv_gt, 1.0 - alpha));
  const Tensor mod = gamma == 0.0 ? Tensor::full(p_t.shape(), 1.0) : ad::pow(ad::rsub_scalar(1.0, p_t), gamma);
  return ad::neg(ad::mean(ad::mul(ad::mul(w, mod), ad::log(p_t))));
}

inline Tensor dice_loss(const Tensor& pred, const Tensor& gt, double smooth = 1.0) {
  require(pred.numel() == gt.numel(), "dice_loss: prediction and mask sizes differ");
  const Tensor inter = ad::sum(ad::mul(pred, gt));
  const Tensor denom = ad::add_scalar(ad::add(ad::sum(pred), ad::sum(gt)), smooth);
  return ad::rsub_scalar(1.0, ad::div(ad::add_scalar(ad::scale(inter, 2.0), smooth), denom));
}

}  // namespace plane::train
