#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sfa/autodiff/tensor.hpp"

namespace sfa::ad {

// ---- convolution and spatial ops (NCHW) ----

// Cross-correlation. input [N,C,H,W], weight [O,C,k,k], bias [O].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
Tensor max_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride);
Tensor avg_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride);
// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& input);
Tensor upsample_nearest2d(const Tensor& input, std::size_t factor);

// Axis-aligned box in feature-map coordinates, corners form.
struct RoiBox {
    std::size_t image = 0;
    float x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};
// Bilinear region pooling with half-pixel alignment. feature [N,C,H,W] -> [R,C,out,out].
// Gradients flow to the feature map only.
Tensor roi_align(const Tensor& feature, std::span<const RoiBox> rois, std::size_t out_size,
                 std::size_t sampling_ratio);

// ---- identity with scaled backward ----

// Forward copies values bit for bit; backward multiplies the incoming gradient by scale.
Tensor grad_reverse(const Tensor& input, float scale);

// ---- elementwise ----

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor log(const Tensor& x);
Tensor scale(const Tensor& x, float factor);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// x [R,M] + bias [M] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// ---- linear algebra and shape ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
// Concatenation along the leading axis.
Tensor concat(const std::vector<Tensor>& parts);
// Flat gather: out[i] = x.data[indices[i]], shape [indices.size()].
Tensor take(const Tensor& x, std::span<const std::size_t> indices);
// Rows [begin, end) of the leading axis.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

// ---- reductions (64-bit accumulation) ----

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor frobenius_sq(const Tensor& x);
// Each leading-axis slice divided by its root mean square: x / sqrt(mean(x^2) + eps).
Tensor rms_normalize(const Tensor& x, float eps = 1e-6f);

// ---- loss building blocks ----

// Elementwise softplus(x) - t*x; targets fixed.
Tensor bce_with_logits(const Tensor& logits, std::span<const float> targets);
// logits [R,K], labels in [0,K) -> per-row negative log-likelihood [R].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
// Elementwise Huber-style smooth L1 with transition at beta (beta = 0 gives L1).
Tensor smooth_l1(const Tensor& x, float beta);

}  // namespace sfa::ad
