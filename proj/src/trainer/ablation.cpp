#include "sfa/trainer/ablation.hpp"

#include <cstdio>

#include "sfa/hsi/band_match.hpp"

namespace sfa::trainer {

const char* ablation_label(Ablation a) {
    switch (a) {
        case Ablation::full: return "SFA";
        case Ablation::no_sacm: return "SFA w/o SACM";
        case Ablation::no_ssam_sacm: return "SFA w/o SSAM+SACM";
        case Ablation::source_only: return "Source only";
    }
    return "?";
}

std::vector<detect::ImageDetections> detect_dataset(const Model& model,
                                                    const std::vector<hsi::AnnotatedSample>& samples) {
    std::vector<hsi::HyperCube> cubes;
    cubes.reserve(samples.size());
    for (const auto& s : samples) cubes.push_back(hsi::match_bands(s.cube(), model.config.bands));
    auto sets = infer(model, cubes);
    std::vector<detect::ImageDetections> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        int id = 0;
        try {
            id = std::stoi(samples[i].id());
        } catch (const std::exception&) {
            throw TrainError("sample id '" + samples[i].id() + "' is not an integer image id");
        }
        out.push_back({id, std::move(sets[i])});
    }
    return out;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::vector<Ablation>& modes,
                                      const std::vector<hsi::AnnotatedSample>& source,
                                      const std::vector<hsi::AnnotatedSample>& target,
                                      const std::filesystem::path& out_dir,
                                      const std::function<void(Ablation, const LossBreakdown&)>& on_step) {
    std::vector<AblationRow> rows;
    for (Ablation mode : modes) {
        TrainConfig cfg = base;
        cfg.ablation = mode;
        TrainOptions opts;
        std::filesystem::path dir;
        if (!out_dir.empty()) {
            dir = out_dir / to_string(mode);
            std::filesystem::create_directories(dir);
            opts.loss_csv = dir / "loss.csv";
            opts.checkpoint = dir / "model.sfaw";
        }
        if (on_step) opts.on_step = [&](const LossBreakdown& b) { on_step(mode, b); };
        auto result = train(cfg, source, target, opts);
        // Labels are read only now, after training has finished.
        const auto dets = detect_dataset(result.model, target);
        if (!dir.empty()) detect::save_detections(dets, dir / "detections.json");
        rows.push_back({mode, eval::evaluate(dets, eval::ground_truth_of(target)), std::move(result.curve)});
    }
    return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
    std::string out;
    char line[128];
    std::snprintf(line, sizeof line, "%-20s %8s %8s\n", "Method", "AP50", "AP");
    out += line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-20s %7.1f%% %7.1f%%\n", ablation_label(r.mode), 100.0 * r.target_report.ap50,
                      100.0 * r.target_report.ap);
        out += line;
    }
    return out;
}

}  // namespace sfa::trainer
