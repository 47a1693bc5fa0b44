#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>

#include "sfa/autodiff/layers.hpp"
#include "sfa/ssam/checkpoint.hpp"

namespace sfa::ssam {

// Spatial size not divisible by the total encoder stride.
class SsamShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr std::size_t kEncoderStride = 8;

struct SsamConfig {
    std::size_t bands = 60;
    std::array<std::size_t, 3> widths{16, 32, 64};
    std::size_t fpn_width = 32;
    std::size_t classifier_width = 16;
};

struct SsamParams {
    SsamConfig config;
    std::array<ad::ConvLayer, 3> encoder;     // stride-2 3x3
    std::array<ad::ConvLayer, 3> decoder;     // 3x3 after nearest upsample, deepest first
    std::array<ad::ConvLayer, 3> lateral;     // 1x1 to fpn_width
    std::array<ad::ConvLayer, 3> fpn_out;     // 3x3
    std::array<ad::ConvLayer, 3> classifier;  // 1x1 convs

    static SsamParams init(const SsamConfig& config, std::uint64_t seed);

    NamedTensors named() const;
    // Backbone = encoder + FPN; what inference needs.
    std::vector<ad::Tensor> backbone_tensors() const;
    std::vector<ad::Tensor> decoder_tensors() const;
    std::vector<ad::Tensor> classifier_tensors() const;
};

struct ForwardOptions {
    bool reconstruct = true;
    bool classify = true;
    float grl_scale = -0.5f;
};

struct SsamOutput {
    ad::Tensor reconstruction;  // same shape as input; undefined when not requested
    ad::Tensor en3;
    std::array<ad::Tensor, 3> fpn_levels;  // strides 2, 4, 8
    ad::Tensor domain_logit;               // [N]; undefined when not requested
};

SsamOutput ssam_forward(const ad::Tensor& cubes, const SsamParams& params, const ForwardOptions& options = {});

// Encoder only: the en_3 bottleneck.
ad::Tensor encode(const ad::Tensor& cubes, const SsamParams& params);

// ||ae(x) - x||_F^2 + alpha * ||en3||_1
ad::Tensor recon_loss(const ad::Tensor& cubes, const SsamOutput& out, float alpha);

enum class Domain { source, target };

struct DomainLossParams {
    float beta = 2.0f;
    float lambda = 0.25f;
};

// -(c/beta) * log(sigmoid(-beta * D)) averaged over the batch, c = 1-lambda (source) or lambda (target).
ad::Tensor domain_loss(const ad::Tensor& logit, Domain domain, const DomainLossParams& p = {});

// grad_reverse, three 1x1 convs with relu between, global average pool. Returns [N].
ad::Tensor classify_domain(const ad::Tensor& fpn_level3, const SsamParams& params, float grl_scale);

}  // namespace sfa::ssam
