#include "sfa/ssam/ssam.hpp"

#include <cmath>
#include <random>
#include <string>

namespace sfa::ssam {

using ad::Tensor;

SsamParams SsamParams::init(const SsamConfig& config, std::uint64_t seed) {
    if (config.bands == 0) {
        throw std::invalid_argument("SSAM needs at least one input band");
    }
    std::mt19937_64 rng(seed);
    SsamParams p;
    p.config = config;
    const auto& w = config.widths;
    p.encoder[0] = ad::make_conv(w[0], config.bands, 3, 2, 1, rng);
    p.encoder[1] = ad::make_conv(w[1], w[0], 3, 2, 1, rng);
    p.encoder[2] = ad::make_conv(w[2], w[1], 3, 2, 1, rng);
    p.decoder[0] = ad::make_conv(w[1], w[2], 3, 1, 1, rng);
    p.decoder[1] = ad::make_conv(w[0], w[1], 3, 1, 1, rng);
    p.decoder[2] = ad::make_conv(config.bands, w[0], 3, 1, 1, rng, 0.5f);
    for (std::size_t i = 0; i < 3; ++i) {
        p.lateral[i] = ad::make_conv(config.fpn_width, w[i], 1, 1, 0, rng);
        p.fpn_out[i] = ad::make_conv(config.fpn_width, config.fpn_width, 3, 1, 1, rng);
    }
    p.classifier[0] = ad::make_conv(config.classifier_width, config.fpn_width, 1, 1, 0, rng);
    p.classifier[1] = ad::make_conv(config.classifier_width, config.classifier_width, 1, 1, 0, rng);
    p.classifier[2] = ad::make_conv(1, config.classifier_width, 1, 1, 0, rng);
    return p;
}

NamedTensors SsamParams::named() const {
    NamedTensors out;
    auto add = [&](const std::string& prefix, const std::array<ad::ConvLayer, 3>& layers) {
        for (std::size_t i = 0; i < 3; ++i) {
            out.emplace_back(prefix + std::to_string(i + 1) + ".weight", layers[i].weight);
            out.emplace_back(prefix + std::to_string(i + 1) + ".bias", layers[i].bias);
        }
    };
    add("ssam.encoder", encoder);
    add("ssam.decoder", decoder);
    add("ssam.fpn_lateral", lateral);
    add("ssam.fpn_out", fpn_out);
    add("ssam.classifier", classifier);
    return out;
}

namespace {

void append(std::vector<Tensor>& out, const std::array<ad::ConvLayer, 3>& layers) {
    for (const auto& l : layers) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
}

}  // namespace

std::vector<Tensor> SsamParams::backbone_tensors() const {
    std::vector<Tensor> out;
    append(out, encoder);
    append(out, lateral);
    append(out, fpn_out);
    return out;
}

std::vector<Tensor> SsamParams::decoder_tensors() const {
    std::vector<Tensor> out;
    append(out, decoder);
    return out;
}

std::vector<Tensor> SsamParams::classifier_tensors() const {
    std::vector<Tensor> out;
    append(out, classifier);
    return out;
}

namespace {

void check_input(const Tensor& cubes, const SsamParams& params) {
    if (cubes.rank() != 4) {
        throw ad::ShapeError("SSAM expects an [N,L,H,W] batch, got " + ad::shape_str(cubes.shape()));
    }
    if (cubes.dim(1) != params.config.bands) {
        throw ad::ShapeError("SSAM was built for " + std::to_string(params.config.bands) + " bands, batch has " +
                             std::to_string(cubes.dim(1)) + "; run band matching first");
    }
    const std::size_t h = cubes.dim(2), w = cubes.dim(3);
    if (h % kEncoderStride != 0 || w % kEncoderStride != 0 || h == 0 || w == 0) {
        const auto up = [](std::size_t v) { return (v + kEncoderStride - 1) / kEncoderStride * kEncoderStride; };
        throw SsamShapeError("spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                             " is not divisible by the encoder stride 8; pad or crop to " + std::to_string(up(h)) +
                             "x" + std::to_string(up(w)));
    }
}

}  // namespace

Tensor encode(const Tensor& cubes, const SsamParams& params) {
    check_input(cubes, params);
    Tensor x = cubes;
    for (const auto& stage : params.encoder) {
        x = ad::relu(stage(x));
    }
    return x;
}

SsamOutput ssam_forward(const Tensor& cubes, const SsamParams& params, const ForwardOptions& options) {
    check_input(cubes, params);
    std::array<Tensor, 3> en;
    Tensor x = cubes;
    for (std::size_t i = 0; i < 3; ++i) {
        x = ad::relu(params.encoder[i](x));
        en[i] = x;
    }
    SsamOutput out;
    out.en3 = en[2];

    if (options.reconstruct) {
        Tensor d = en[2];
        for (std::size_t i = 0; i < 3; ++i) {
            d = params.decoder[i](ad::upsample_nearest2d(d, 2));
            if (i < 2) {
                d = ad::relu(d);
            }
        }
        out.reconstruction = d;
    }

    Tensor top = params.lateral[2](en[2]);
    std::array<Tensor, 3> merged;
    merged[2] = top;
    for (std::size_t i = 2; i-- > 0;) {
        merged[i] = ad::add(params.lateral[i](en[i]), ad::upsample_nearest2d(merged[i + 1], 2));
    }
    for (std::size_t i = 0; i < 3; ++i) {
        out.fpn_levels[i] = params.fpn_out[i](merged[i]);
    }

    if (options.classify) {
        out.domain_logit = classify_domain(out.fpn_levels[2], params, options.grl_scale);
    }
    return out;
}

Tensor recon_loss(const Tensor& cubes, const SsamOutput& out, float alpha) {
    if (!out.reconstruction.defined()) {
        throw std::logic_error("recon_loss needs a forward pass with reconstruction enabled");
    }
    if (out.reconstruction.shape() != cubes.shape()) {
        throw ad::ShapeError("reconstruction " + ad::shape_str(out.reconstruction.shape()) + " vs input " +
                             ad::shape_str(cubes.shape()));
    }
    Tensor fro = ad::frobenius_sq(ad::sub(out.reconstruction, cubes));
    if (alpha == 0.0f) {
        return fro;
    }
    return ad::add(fro, ad::scale(ad::sum(ad::abs(out.en3)), alpha));
}

Tensor domain_loss(const Tensor& logit, Domain domain, const DomainLossParams& p) {
    if (!(p.beta > 0) || !(p.lambda > 0 && p.lambda < 1)) {
        throw std::invalid_argument("domain loss needs beta > 0 and 0 < lambda < 1");
    }
    for (std::size_t i = 0; i < logit.numel(); ++i) {
        if (!std::isfinite(logit.at(i))) {
            throw std::domain_error("domain logit " + std::to_string(i) + " is not finite");
        }
    }
    const float c = domain == Domain::source ? 1.0f - p.lambda : p.lambda;
    // -log(sigmoid(-b*D)) == softplus(b*D)
    return ad::scale(ad::mean(ad::softplus(ad::scale(logit, p.beta))), c / p.beta);
}

Tensor classify_domain(const Tensor& fpn_level3, const SsamParams& params, float grl_scale) {
    Tensor x = ad::grad_reverse(fpn_level3, grl_scale);
    x = ad::relu(params.classifier[0](x));
    x = ad::relu(params.classifier[1](x));
    x = params.classifier[2](x);
    return ad::reshape(ad::global_avg_pool(x), {fpn_level3.dim(0)});
}

}  // namespace sfa::ssam
