#pragma once

#include <cstddef>
#include <vector>

#include "sfa/autodiff/tensor.hpp"

namespace sfa::ad {

struct AdamOptions {
    float lr = 3e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

// Adam with bias correction. Moment buffers live as long as the optimizer.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamOptions options);

    // Throws GraphError if any parameter lacks a gradient.
    void step();
    void zero_grad();

    std::size_t steps_taken() const { return step_; }
    const AdamOptions& options() const { return options_; }

private:
    std::vector<Tensor> params_;
    AdamOptions options_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t step_ = 0;
};

}  // namespace sfa::ad
