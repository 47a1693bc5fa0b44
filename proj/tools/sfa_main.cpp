#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "sfa/detect/detections_json.hpp"
#include "sfa/eval/eval.hpp"
#include "sfa/hsi/annotations.hpp"
#include "sfa/hsi/band_match.hpp"
#include "sfa/hsi/cube.hpp"
#include "sfa/hsi/le_bytes.hpp"
#include "sfa/hsi/synth.hpp"
#include "sfa/hsi/synth_config.hpp"
#include "sfa/sacm/sacm.hpp"
#include "sfa/ssam/checkpoint.hpp"
#include "sfa/trainer/ablation.hpp"
#include "sfa/trainer/trainer.hpp"

namespace fs = std::filesystem;
using namespace sfa;

namespace {

void require_file(const fs::path& p) {
    if (!fs::is_regular_file(p)) throw std::runtime_error("file not found: " + p.string());
}

void require_dir(const fs::path& p) {
    if (!fs::is_directory(p)) throw std::runtime_error("directory not found: " + p.string());
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    le::write_file_atomic(p.string(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Refuses a non-empty output directory unless forced; forcing clears it.
void prepare_out_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force) throw std::runtime_error("output directory " + dir.string() + " is not empty (use --force)");
        for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
    }
    fs::create_directories(dir);
}

void print_settings(std::initializer_list<std::pair<const char*, std::string>> kv) {
    for (const auto& [k, v] : kv) std::cout << k << "=" << v << "\n";
}

trainer::TrainConfig resolve_train_config(const std::string& path, const std::optional<std::uint64_t>& seed,
                                          const std::string& ablation) {
    trainer::TrainConfig cfg;
    if (!path.empty()) {
        require_file(path);
        cfg = trainer::load_config(path);
    }
    if (seed) cfg.seed = *seed;
    if (!ablation.empty()) cfg.ablation = trainer::parse_ablation(ablation);
    cfg.validate();
    return cfg;
}

struct Datasets {
    std::vector<hsi::AnnotatedSample> source, target;
};

Datasets load_pair(const fs::path& root) {
    require_dir(root / "source");
    require_dir(root / "target");
    return {hsi::load_dataset(root / "source"), hsi::load_dataset(root / "target")};
}

std::string progress_line(const trainer::LossBreakdown& b) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "step %zu total %.4f l_s_rpn %.4f l_roi %.4f l_s_r %.4f l_t_r %.4f", b.step, b.total,
                  b.l_s_rpn, b.l_roi, b.l_s_r, b.l_t_r);
    return buf;
}

// ---- commands ----

void cmd_gen_synth(const std::string& config, const fs::path& out, std::optional<std::uint64_t> seed, bool force) {
    hsi::SynthConfig cfg = hsi::reference_synth_config();
    if (!config.empty()) {
        require_file(config);
        cfg = hsi::load_synth_config(config);
    }
    if (seed) cfg.seed = *seed;
    cfg.validate();
    const std::string resolved = hsi::dump_synth_config(cfg);
    std::cout << resolved;
    prepare_out_dir(out, force);
    const auto pair = hsi::generate_domain_pair(cfg);
    hsi::save_dataset(pair.source, cfg.categories, out / "source");
    hsi::save_dataset(pair.target, cfg.categories, out / "target");
    write_text(out / "synth.cfg", resolved);
    std::cout << "wrote " << pair.source.size() << " source and " << pair.target.size() << " target cubes to "
              << out.string() << "\n";
}

void cmd_band_match(const fs::path& in, std::uint32_t bands, const fs::path& out) {
    print_settings({{"in", in.string()}, {"bands", std::to_string(bands)}, {"out", out.string()}});
    require_file(in);
    if (bands == 0) throw std::runtime_error("--bands must be at least 1");
    const auto cube = hsi::read_cube(in);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    hsi::write_cube(hsi::match_bands(cube, bands), out);
    std::cout << cube.bands << " -> " << bands << " bands\n";
}

void cmd_train(const trainer::TrainConfig& cfg, const fs::path& dataset, const fs::path& out, bool force) {
    std::cout << trainer::dump_config(cfg);
    const auto data = load_pair(dataset);
    prepare_out_dir(out, force);
    trainer::TrainOptions opts;
    opts.loss_csv = out / "loss.csv";
    opts.checkpoint = out / "model.sfaw";
    opts.on_step = [](const trainer::LossBreakdown& b) {
        if (b.step % 50 == 0) std::cerr << progress_line(b) << "\n";
    };
    const auto result = trainer::train(cfg, data.source, data.target, opts);
    std::cout << "final " << progress_line(result.curve.back()) << "\n";
    std::cout << "checkpoint " << opts.checkpoint.string() << "\n";
}

void cmd_infer(const fs::path& checkpoint, const fs::path& dataset, const fs::path& out) {
    print_settings({{"checkpoint", checkpoint.string()}, {"dataset", dataset.string()}, {"out", out.string()}});
    require_file(checkpoint);
    require_dir(dataset);
    const auto model = trainer::load_checkpoint(checkpoint);
    const auto samples = hsi::load_dataset(dataset);
    const auto dets = trainer::detect_dataset(model, samples);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    detect::save_detections(dets, out);
    std::size_t n = 0;
    for (const auto& d : dets) n += d.detections.size();
    std::cout << n << " detections on " << dets.size() << " images\n";
}

void cmd_eval(const fs::path& in, const fs::path& dataset, const std::string& out) {
    print_settings({{"in", in.string()}, {"dataset", dataset.string()}, {"out", out}});
    require_file(in);
    require_dir(dataset);
    require_file(dataset / "annotations.json");
    const auto dets = detect::load_detections(in);
    const auto samples = hsi::load_dataset(dataset);
    std::map<int, std::string> names;
    for (const auto& c : hsi::load_annotations(dataset / "annotations.json").categories) names[c.id] = c.name;
    const auto report = eval::evaluate(dets, eval::ground_truth_of(samples));
    std::cout << eval::format_report(report, names);
    if (!out.empty()) write_text(out, eval::report_json(report) + "\n");
}

void cmd_gram(const fs::path& in, const std::string& checkpoint, const fs::path& out, bool normalize) {
    print_settings({{"in", in.string()}, {"checkpoint", checkpoint}, {"out", out.string()},
                    {"normalize", normalize ? "1" : "0"}});
    require_file(in);
    const auto bytes = le::read_file(in.string());
    ad::Tensor feature;
    if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, hsi::kCubeMagic)) {
        if (checkpoint.empty()) throw std::runtime_error("a cube input needs --checkpoint to compute en_3 features");
        require_file(checkpoint);
        const auto model = trainer::load_checkpoint(checkpoint);
        const auto cube = hsi::match_bands(hsi::decode_cube(bytes), model.config.bands);
        ad::NoGradGuard ng;
        const ad::Tensor x({1, std::size_t{cube.bands}, std::size_t{cube.height}, std::size_t{cube.width}},
                           trainer::standardize(cube));
        feature = ssam::encode(x, model.ssam);
    } else {
        const auto tensors = decode_weights(bytes);
        if (tensors.size() != 1) {
            throw std::runtime_error(in.string() + ": expected exactly one tensor, found " +
                                     std::to_string(tensors.size()));
        }
        feature = tensors.front().second;
        if (feature.rank() == 3) feature = ad::reshape(feature, {1, feature.dim(0), feature.dim(1), feature.dim(2)});
        if (feature.rank() != 4) throw std::runtime_error("feature dump must be [C,H,W] or [N,C,H,W]");
    }
    const auto g = sacm::gram(feature, normalize);
    const std::size_t c = g.dim(0);
    std::string csv;
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            char buf[32];
            auto [p, ec] = std::to_chars(buf, buf + sizeof buf, g.at(i * c + j));
            if (j) csv += ',';
            csv.append(buf, p);
        }
        csv += '\n';
    }
    write_text(out, csv);
    std::cout << c << "x" << c << " Gram matrix written\n";
}

void cmd_ablate(const trainer::TrainConfig& cfg, const fs::path& dataset, const fs::path& out, bool force,
                bool baseline) {
    std::cout << trainer::dump_config(cfg);
    const auto data = load_pair(dataset);
    prepare_out_dir(out, force);
    std::vector<trainer::Ablation> modes{trainer::Ablation::no_ssam_sacm, trainer::Ablation::no_sacm,
                                         trainer::Ablation::full};
    if (baseline) modes.push_back(trainer::Ablation::source_only);
    const auto rows = trainer::run_ablation(cfg, modes, data.source, data.target, out,
                                            [](trainer::Ablation m, const trainer::LossBreakdown& b) {
                                                if (b.step % 100 == 0) {
                                                    std::cerr << trainer::to_string(m) << " " << progress_line(b)
                                                              << "\n";
                                                }
                                            });
    const std::string table = trainer::format_ablation(rows);
    std::cout << table;
    write_text(out / "ablation.txt", table);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spectral-spatial feature alignment for cross-domain hyperspectral object detection"};
    app.require_subcommand(1);
    std::function<void()> run;

    std::string config, out_str, in_str, dataset, checkpoint, ablation;
    std::optional<std::uint64_t> seed;
    std::uint32_t bands = 0;
    bool force = false, normalize = false, baseline = true;

    auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic source/target dataset pair");
    gen->add_option("--config", config, "Synth config (key=value); defaults to the reference pair");
    gen->add_option("--out", out_str, "Output directory")->required();
    gen->add_option("--seed", seed, "Override the generator seed");
    gen->add_flag("--force", force, "Overwrite a non-empty output directory");
    gen->callback([&] { run = [&] { cmd_gen_synth(config, out_str, seed, force); }; });

    auto* bm = app.add_subcommand("band-match", "Resample a cube to a band count");
    bm->add_option("--in", in_str, "Input cube")->required();
    bm->add_option("--bands", bands, "Target band count")->required();
    bm->add_option("--out", out_str, "Output cube")->required();
    bm->callback([&] { run = [&] { cmd_band_match(in_str, bands, out_str); }; });

    auto* tr = app.add_subcommand("train", "Train on <dataset>/source with unlabelled <dataset>/target");
    tr->add_option("--config", config, "Train config (key=value)");
    tr->add_option("--dataset", dataset, "Directory holding source/ and target/")->required();
    tr->add_option("--out", out_str, "Output directory for model.sfaw and loss.csv")->required();
    tr->add_option("--seed", seed, "Override the training seed");
    tr->add_option("--ablation", ablation, "full | no_sacm | no_ssam_sacm | source_only");
    tr->add_flag("--force", force, "Overwrite a non-empty output directory");
    tr->callback([&] {
        run = [&] { cmd_train(resolve_train_config(config, seed, ablation), dataset, out_str, force); };
    });

    auto* inf = app.add_subcommand("infer", "Detect objects in every cube of a dataset directory");
    inf->add_option("--checkpoint", checkpoint, "model.sfaw written by train")->required();
    inf->add_option("--dataset", dataset, "Dataset directory (annotations.json + cubes)")->required();
    inf->add_option("--out", out_str, "Detections JSON")->required();
    inf->callback([&] { run = [&] { cmd_infer(checkpoint, dataset, out_str); }; });

    auto* ev = app.add_subcommand("eval", "AP/AR of a detections file against a dataset's labels");
    ev->add_option("--in", in_str, "Detections JSON")->required();
    ev->add_option("--dataset", dataset, "Dataset directory with ground truth")->required();
    ev->add_option("--out", out_str, "Optional JSON report");
    ev->callback([&] { run = [&] { cmd_eval(in_str, dataset, out_str); }; });

    auto* gr = app.add_subcommand("gram", "Dump the Gram matrix of en_3 features as CSV");
    gr->add_option("--in", in_str, "Cube (needs --checkpoint) or single-tensor feature dump")->required();
    gr->add_option("--checkpoint", checkpoint, "Model used to encode a cube");
    gr->add_option("--out", out_str, "CSV output")->required();
    gr->add_flag("--normalize", normalize, "Divide by the number of spatial positions");
    gr->callback([&] { run = [&] { cmd_gram(in_str, checkpoint, out_str, normalize); }; });

    auto* ab = app.add_subcommand("ablate", "Train and evaluate the ablation configurations");
    ab->add_option("--config", config, "Train config (key=value)");
    ab->add_option("--dataset", dataset, "Directory holding source/ and target/")->required();
    ab->add_option("--out", out_str, "Output directory")->required();
    ab->add_option("--seed", seed, "Override the training seed");
    ab->add_flag("--force", force, "Overwrite a non-empty output directory");
    ab->add_flag("!--no-baseline", baseline, "Skip the source-only row");
    ab->callback([&] {
        run = [&] { cmd_ablate(resolve_train_config(config, seed, ""), dataset, out_str, force, baseline); };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    try {
        run();
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (auto& ch : msg) {
            if (ch == '\n') ch = ' ';
        }
        std::cerr << "error: " << msg << "\n";
        return 1;
    }
    return 0;
}
