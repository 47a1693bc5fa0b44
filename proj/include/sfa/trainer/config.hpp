#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace sfa::trainer {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Ablation { full, no_sacm, no_ssam_sacm, source_only };

// How the target image enters the target domain loss: `complement` scores -D_t so the classifier
// can separate the domains, `literal` passes D_t unchanged.
enum class TargetLogit { complement, literal };

enum class Reduction { sum, mean };

const char* to_string(Ablation a);
const char* to_string(TargetLogit t);
const char* to_string(Reduction r);
Ablation parse_ablation(const std::string& text);

struct TrainConfig {
    // Loss weights.
    float epsilon = 0.5f;
    float eta = 0.5f;
    float tau = 0.2f;
    // Domain loss.
    float beta = 2.0f;
    float lambda = 0.25f;
    float grl_scale = -0.5f;
    float alpha = 0.01f;  // L1 weight on the bottleneck
    float lr = 3e-4f;
    std::size_t iterations = 500;
    std::size_t batch_size = 2;  // per domain
    Ablation ablation = Ablation::full;
    std::uint64_t seed = 0;

    TargetLogit target_logit = TargetLogit::complement;
    bool target_rpn = true;                   // all-negative objectness term on target images
    Reduction recon_reduction = Reduction::mean;
    bool sacm_normalize = true;               // divide Gram matrices by H*W
    bool augment = true;                      // random flips of training crops
    bool domain_input_norm = true;            // RMS-normalize FPN_3 per image before the domain classifier

    // Model sizes. bands and num_classes of 0 are resolved from the data.
    std::uint32_t bands = 0;
    std::size_t num_classes = 0;
    std::array<std::size_t, 3> widths{16, 32, 64};
    std::size_t fpn_width = 32;
    std::size_t classifier_width = 16;
    std::size_t rpn_hidden = 32;
    std::size_t roi_hidden = 64;

    // Inference.
    float score_floor = 0.05f;
    std::size_t test_proposals = 100;

    // Throws ConfigError when an invariant fails.
    void validate() const;
};

// Flat key=value text. Blank lines and lines starting with '#' are skipped; unknown keys,
// repeated keys and unparseable values are errors. Missing keys keep their defaults.
TrainConfig parse_config(const std::string& text, const TrainConfig& base = {});
TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base = {});
// Every field, one per line, in a fixed order; parse_config(dump_config(c)) == c.
std::string dump_config(const TrainConfig& cfg);

bool operator==(const TrainConfig& a, const TrainConfig& b);

}  // namespace sfa::trainer
