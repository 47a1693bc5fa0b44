#include "sfa/sacm/sacm.hpp"

#include <stdexcept>
#include <string>

#include "sfa/autodiff/ops.hpp"

namespace sfa::sacm {

using ad::Tensor;

Tensor gram(const Tensor& feature, bool normalize) {
    if (feature.rank() != 4 || feature.numel() == 0) {
        throw ad::ShapeError("gram expects a non-empty [N,C,H,W] feature, got " + ad::shape_str(feature.shape()));
    }
    const std::size_t n = feature.dim(0), c = feature.dim(1), hw = feature.dim(2) * feature.dim(3);
    Tensor total;
    for (std::size_t i = 0; i < n; ++i) {
        // Row-major [C, HW] is M^T for this image.
        Tensor mt = ad::reshape(ad::slice_rows(feature, i, i + 1), {c, hw});
        Tensor g = ad::matmul(mt, ad::transpose(mt));
        total = total.defined() ? ad::add(total, g) : g;
    }
    const float denom = static_cast<float>(n) * (normalize ? static_cast<float>(hw) : 1.0f);
    return denom == 1.0f ? total : ad::scale(total, 1.0f / denom);
}

Tensor sacm_loss(const Tensor& f_s, const Tensor& f_t, bool normalize) {
    if (f_s.rank() != 4 || f_t.rank() != 4 || f_s.dim(1) != f_t.dim(1)) {
        throw ad::ShapeError("sacm_loss needs [N,C,H,W] features with equal C, got " + ad::shape_str(f_s.shape()) +
                             " and " + ad::shape_str(f_t.shape()));
    }
    return ad::frobenius_sq(ad::sub(gram(f_t, normalize), gram(f_s, normalize)));
}

}  // namespace sfa::sacm
