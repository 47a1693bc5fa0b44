#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfa/autodiff/adam.hpp"
#include "sfa/detect/heads.hpp"
#include "sfa/hsi/annotations.hpp"
#include "sfa/ssam/ssam.hpp"
#include "sfa/trainer/config.hpp"

namespace sfa::trainer {

class TrainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A loss term came out NaN or infinite; the message names the term.
class NonFiniteLoss : public TrainError {
public:
    using TrainError::TrainError;
};

struct Model {
    TrainConfig config;  // bands and num_classes resolved
    ssam::SsamParams ssam;
    detect::RpnParams rpn;
    detect::RoiParams roi;

    static Model init(const TrainConfig& config);
    NamedTensors named() const;
    // Parameters that receive a gradient under the configured ablation.
    std::vector<ad::Tensor> trainable() const;
};

// Weights go to `path`, the resolved config to `path` + ".cfg".
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

struct LossBreakdown {
    std::size_t step = 0;
    double l_s_r = 0, l_s_d = 0, l_sacm = 0, l_s_rpn = 0, l_roi = 0, l_t_r = 0, l_t_d = 0, l_t_rpn = 0;
    double total = 0;  // value of the tensor the backward pass ran from

    // eps*l_s_r + eta*l_s_d + tau*l_sacm + l_s_rpn + l_roi + eps*l_t_r + eta*l_t_d + l_t_rpn
    double recombined(const TrainConfig& cfg) const;
};

inline constexpr const char* kLossCsvHeader = "step,l_s_r,l_s_d,l_sacm,l_s_rpn,l_roi,l_t_r,l_t_d,l_t_rpn,total";
std::string loss_csv_row(const LossBreakdown& b);

// Zero mean, unit variance per band; the deviation is floored at 1e-6.
std::vector<float> standardize(const hsi::HyperCube& cube);

// One step's inputs, already band-matched and standardized.
struct Batch {
    ad::Tensor source;  // [B, L, H, W]
    std::vector<std::vector<Box>> source_boxes;
    std::vector<std::vector<int>> source_classes;
    ad::Tensor target;  // [B, L, H, W]; undefined for source_only
};

struct TrainState {
    Model model;
    ad::Adam adam;
    std::size_t step = 0;

    explicit TrainState(Model m);
};

// Forward both flows, one backward pass on the total, one Adam step.
LossBreakdown train_step(const Batch& batch, TrainState& state);

// Band matching, standardization and deterministic per-step batch sampling. Target samples
// contribute only their cubes.
class BatchSource {
public:
    BatchSource(const TrainConfig& cfg, const std::vector<hsi::AnnotatedSample>& source,
                const std::vector<hsi::AnnotatedSample>& target);
    Batch make(std::size_t step) const;
    std::uint32_t bands() const { return bands_; }
    std::size_t num_classes() const { return num_classes_; }

private:
    struct Item {
        std::vector<float> values;
        std::vector<Box> boxes;
        std::vector<int> classes;
    };
    TrainConfig cfg_;
    std::uint32_t bands_ = 0, width_ = 0, height_ = 0;
    std::size_t num_classes_ = 0;
    std::vector<Item> source_;
    std::vector<Item> target_;
};

struct TrainOptions {
    std::filesystem::path loss_csv;    // skipped when empty
    std::filesystem::path checkpoint;  // skipped when empty
    std::function<void(const LossBreakdown&)> on_step;
};

struct TrainResult {
    Model model;
    std::vector<LossBreakdown> curve;
};

// Deterministic given cfg.seed. A label firewall is up for the whole run, so any read of
// held-out (target) labels throws.
TrainResult train(const TrainConfig& cfg, const std::vector<hsi::AnnotatedSample>& source,
                  const std::vector<hsi::AnnotatedSample>& target, const TrainOptions& options = {});

// Encoder, FPN, RPN proposals, ROI head and per-class NMS. Cubes must carry the trained band count.
std::vector<detect::DetectionSet> infer(const Model& model, const std::vector<hsi::HyperCube>& cubes);

// SFA_THREADS if set and positive, otherwise the hardware concurrency (at least 1).
std::size_t worker_threads();

}  // namespace sfa::trainer
