#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sfa/eval/eval.hpp"
#include "sfa/trainer/trainer.hpp"

namespace sfa::trainer {

// Row label as printed in the ablation table.
const char* ablation_label(Ablation a);

struct AblationRow {
    Ablation mode = Ablation::full;
    eval::EvalReport target_report;
    std::vector<LossBreakdown> curve;
};

// Trains one model per mode from `base` and evaluates it on the held-out target labels.
// With a non-empty out_dir each mode writes <out_dir>/<mode>/{model.sfaw,loss.csv,detections.json}.
std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::vector<Ablation>& modes,
                                      const std::vector<hsi::AnnotatedSample>& source,
                                      const std::vector<hsi::AnnotatedSample>& target,
                                      const std::filesystem::path& out_dir = {},
                                      const std::function<void(Ablation, const LossBreakdown&)>& on_step = {});

// Target detections of a trained model; cubes are band-matched to the model first.
std::vector<detect::ImageDetections> detect_dataset(const Model& model,
                                                    const std::vector<hsi::AnnotatedSample>& samples);

// Method / AP50 / AP table, one row per mode.
std::string format_ablation(const std::vector<AblationRow>& rows);

}  // namespace sfa::trainer
