#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "sfa/autodiff/ops.hpp"

namespace sfa::ad {

struct ConvLayer {
    Tensor weight;  // [O,C,k,k]
    Tensor bias;    // [O]
    std::size_t stride = 1;
    std::size_t padding = 0;

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
};

struct LinearLayer {
    Tensor weight;  // [in,out]
    Tensor bias;    // [out]

    Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }
};

// He-uniform weights, zero bias.
inline ConvLayer make_conv(std::size_t out, std::size_t in, std::size_t k, std::size_t stride, std::size_t padding,
                           std::mt19937_64& rng, float gain = 1.0f) {
    const float bound = gain * std::sqrt(6.0f / static_cast<float>(in * k * k));
    std::uniform_real_distribution<float> u(-bound, bound);
    std::vector<float> w(out * in * k * k);
    for (auto& v : w) v = u(rng);
    return {Tensor({out, in, k, k}, std::move(w), true), Tensor::zeros({out}, true), stride, padding};
}

inline LinearLayer make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng, float gain = 1.0f) {
    const float bound = gain * std::sqrt(6.0f / static_cast<float>(in));
    std::uniform_real_distribution<float> u(-bound, bound);
    std::vector<float> w(in * out);
    for (auto& v : w) v = u(rng);
    return {Tensor({in, out}, std::move(w), true), Tensor::zeros({out}, true)};
}

}  // namespace sfa::ad
