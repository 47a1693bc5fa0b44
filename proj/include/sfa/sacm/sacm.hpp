#pragma once

#include "sfa/autodiff/tensor.hpp"

namespace sfa::sacm {

// Channel autocorrelation of an [N,C,H,W] feature: per image M is (H*W)xC and the
// result is M^T M averaged over the batch, optionally divided by H*W. Returns [C,C].
ad::Tensor gram(const ad::Tensor& feature, bool normalize = false);

// ||gram(F_T) - gram(F_S)||_F^2. Spatial sizes may differ; channel counts must agree.
ad::Tensor sacm_loss(const ad::Tensor& f_s, const ad::Tensor& f_t, bool normalize = false);

}  // namespace sfa::sacm
