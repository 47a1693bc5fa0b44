#include "sfa/autodiff/adam.hpp"

#include <cmath>

namespace sfa::ad {

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
        if (!p.is_leaf()) {
            throw GraphError("Adam parameters must be leaf tensors");
        }
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step() {
    for (const auto& p : params_) {
        if (!p.has_grad()) {
            throw GraphError("Adam step: parameter of shape " + shape_str(p.shape()) + " has no gradient");
        }
    }
    ++step_;
    const double b1 = options_.beta1;
    const double b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto values = params_[i].mutable_data();
        const auto grad = params_[i].grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double g = grad[j];
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            const double update = options_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
            values[j] = static_cast<float>(values[j] - update);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) {
        p.zero_grad();
    }
}

}  // namespace sfa::ad
