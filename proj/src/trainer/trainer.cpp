#include "sfa/trainer/trainer.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include "sfa/autodiff/ops.hpp"
#include "sfa/hsi/band_match.hpp"
#include "sfa/hsi/label_guard.hpp"
#include "sfa/hsi/le_bytes.hpp"
#include "sfa/sacm/sacm.hpp"

namespace sfa::trainer {

using ad::Tensor;

namespace {

constexpr std::size_t kAnchorsPerCell = 3;

bool uses_recon(Ablation a) { return a == Ablation::full || a == Ablation::no_sacm; }
bool uses_target(Ablation a) { return a != Ablation::source_only; }
bool uses_sacm(Ablation a) { return a == Ablation::full; }

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace

// ---- model ----

Model Model::init(const TrainConfig& config) {
    config.validate();
    if (config.bands == 0 || config.num_classes == 0) {
        throw ConfigError("model needs resolved bands and num_classes");
    }
    Model m;
    m.config = config;
    ssam::SsamConfig sc;
    sc.bands = config.bands;
    sc.widths = config.widths;
    sc.fpn_width = config.fpn_width;
    sc.classifier_width = config.classifier_width;
    m.ssam = ssam::SsamParams::init(sc, mix(config.seed, 1, 0));
    m.rpn = detect::RpnParams::init(config.fpn_width, config.rpn_hidden, kAnchorsPerCell, mix(config.seed, 2, 0));
    m.roi = detect::RoiParams::init(config.fpn_width, config.roi_hidden, config.num_classes, mix(config.seed, 3, 0));
    return m;
}

NamedTensors Model::named() const {
    NamedTensors out = ssam.named();
    for (auto& t : rpn.named()) out.push_back(t);
    for (auto& t : roi.named()) out.push_back(t);
    return out;
}

std::vector<Tensor> Model::trainable() const {
    std::vector<Tensor> out = ssam.backbone_tensors();
    if (uses_recon(config.ablation)) {
        for (auto& t : ssam.decoder_tensors()) out.push_back(t);
    }
    if (uses_target(config.ablation)) {
        for (auto& t : ssam.classifier_tensors()) out.push_back(t);
    }
    for (auto& t : rpn.tensors()) out.push_back(t);
    for (auto& t : roi.tensors()) out.push_back(t);
    return out;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    save_weights(model.named(), path);
    const std::string text = dump_config(model.config);
    le::write_file_atomic(path.string() + ".cfg",
                          std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Model load_checkpoint(const std::filesystem::path& path) {
    const auto cfg_path = std::filesystem::path(path.string() + ".cfg");
    if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
    if (!std::filesystem::exists(cfg_path)) throw CheckpointError("checkpoint config not found: " + cfg_path.string());
    Model m = Model::init(load_config(cfg_path));
    assign_weights(load_weights(path), m.named());
    return m;
}

// ---- losses ----

double LossBreakdown::recombined(const TrainConfig& c) const {
    return c.epsilon * l_s_r + c.eta * l_s_d + c.tau * l_sacm + l_s_rpn + l_roi + c.epsilon * l_t_r + c.eta * l_t_d +
           l_t_rpn;
}

std::string loss_csv_row(const LossBreakdown& b) {
    std::string row = std::to_string(b.step);
    for (double v : {b.l_s_r, b.l_s_d, b.l_sacm, b.l_s_rpn, b.l_roi, b.l_t_r, b.l_t_d, b.l_t_rpn, b.total}) {
        char buf[32];
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, static_cast<float>(v));
        row += ',';
        row.append(buf, p);
    }
    return row;
}

std::vector<float> standardize(const hsi::HyperCube& cube) {
    std::vector<float> out(cube.values.size());
    const std::size_t plane = cube.plane_size();
    for (std::uint32_t b = 0; b < cube.bands; ++b) {
        const auto band = cube.band(b);
        double mean = 0.0;
        for (float v : band) mean += v;
        mean /= static_cast<double>(plane);
        double var = 0.0;
        for (float v : band) var += (v - mean) * (v - mean);
        const double sd = std::max(std::sqrt(var / static_cast<double>(plane)), 1e-6);
        for (std::size_t i = 0; i < plane; ++i) {
            out[b * plane + i] = static_cast<float>((band[i] - mean) / sd);
        }
    }
    return out;
}

TrainState::TrainState(Model m)
    : model(std::move(m)), adam(model.trainable(), ad::AdamOptions{model.config.lr}) {}

namespace {

// Adds weight * term to the running total and records its value.
struct Accumulator {
    Tensor total;

    void add(const char* name, const Tensor& term, float weight, double& slot) {
        const float v = term.item();
        if (!std::isfinite(v)) throw NonFiniteLoss(std::string("loss term ") + name + " is not finite");
        slot = v;
        const Tensor w = weight == 1.0f ? term : ad::scale(term, weight);
        total = total.defined() ? ad::add(total, w) : w;
    }
};

Tensor reduce_recon(const Tensor& loss, const Tensor& cubes, Reduction r) {
    if (r == Reduction::sum) return loss;
    return ad::scale(loss, 1.0f / static_cast<float>(cubes.numel()));
}

std::vector<Tensor> levels_of(const ssam::SsamOutput& out) {
    return {out.fpn_levels.begin(), out.fpn_levels.end()};
}

const detect::AnchorSet& anchors_for(std::size_t h, std::size_t w) {
    thread_local std::map<std::pair<std::size_t, std::size_t>, detect::AnchorSet> cache;
    auto it = cache.find({h, w});
    if (it == cache.end()) it = cache.emplace(std::pair{h, w}, detect::make_anchors(h, w)).first;
    return it->second;
}

}  // namespace

LossBreakdown train_step(const Batch& batch, TrainState& state) {
    const Model& m = state.model;
    const TrainConfig& c = m.config;
    const bool recon = uses_recon(c.ablation);
    const bool target = uses_target(c.ablation);
    const std::uint64_t step_seed = mix(c.seed, 4, state.step);
    const std::size_t H = batch.source.dim(2), W = batch.source.dim(3);
    const auto& anchors = anchors_for(H, W);
    const ssam::DomainLossParams dp{c.beta, c.lambda};
    const ssam::ForwardOptions fo{recon, false, c.grl_scale};
    const auto domain_logit = [&](const ssam::SsamOutput& out) {
        const Tensor f = c.domain_input_norm ? ad::rms_normalize(out.fpn_levels[2]) : out.fpn_levels[2];
        return ssam::classify_domain(f, m.ssam, c.grl_scale);
    };

    LossBreakdown b;
    b.step = state.step;
    Accumulator acc;

    // Source flow.
    const auto out_s = ssam::ssam_forward(batch.source, m.ssam, fo);
    if (recon) {
        acc.add("l_s_r", reduce_recon(ssam::recon_loss(batch.source, out_s, c.alpha), batch.source, c.recon_reduction),
                c.epsilon, b.l_s_r);
    }
    if (target) acc.add("l_s_d", ssam::domain_loss(domain_logit(out_s), ssam::Domain::source, dp), c.eta, b.l_s_d);

    const auto fpn_s = levels_of(out_s);
    const auto rpn_s = detect::rpn_forward(fpn_s, m.rpn);
    acc.add("l_s_rpn", detect::rpn_loss(rpn_s, anchors, batch.source_boxes, {}, step_seed), 1.0f, b.l_s_rpn);

    std::vector<std::vector<Box>> proposals;
    for (std::size_t n = 0; n < batch.source_boxes.size(); ++n) {
        ad::NoGradGuard ng;
        proposals.push_back(detect::propose(detect::gather_image(rpn_s, n), anchors, static_cast<float>(W),
                                            static_cast<float>(H), {}));
    }
    const auto rs = detect::sample_rois(proposals, batch.source_boxes, batch.source_classes, {}, step_seed);
    const auto roi_out = detect::roi_forward(fpn_s, rs.rois, m.roi);
    acc.add("l_roi", detect::roi_loss(roi_out, rs.labels, rs.targets), 1.0f, b.l_roi);

    // Target flow.
    if (target) {
        const auto out_t = ssam::ssam_forward(batch.target, m.ssam, fo);
        if (uses_sacm(c.ablation)) {
            // The target bottleneck doubles as F_T: same encoder weights, same input.
            acc.add("l_sacm", sacm::sacm_loss(out_s.en3, out_t.en3, c.sacm_normalize), c.tau, b.l_sacm);
        }
        if (recon) {
            acc.add("l_t_r",
                    reduce_recon(ssam::recon_loss(batch.target, out_t, c.alpha), batch.target, c.recon_reduction),
                    c.epsilon, b.l_t_r);
        }
        const Tensor d_t = domain_logit(out_t);
        const Tensor logit = c.target_logit == TargetLogit::complement ? ad::scale(d_t, -1.0f) : d_t;
        acc.add("l_t_d", ssam::domain_loss(logit, ssam::Domain::target, dp), c.eta, b.l_t_d);
        if (c.target_rpn) {
            const auto rpn_t = detect::rpn_forward(levels_of(out_t), m.rpn);
            const std::vector<std::vector<Box>> none(batch.target.dim(0));
            acc.add("l_t_rpn", detect::rpn_loss(rpn_t, anchors, none, {}, mix(step_seed, 5, 0)), 1.0f, b.l_t_rpn);
        }
    }

    b.total = acc.total.item();
    if (!std::isfinite(b.total)) throw NonFiniteLoss("total loss is not finite");
    ad::backward(acc.total);
    state.adam.step();
    state.adam.zero_grad();
    ++state.step;
    return b;
}

// ---- data ----

BatchSource::BatchSource(const TrainConfig& cfg, const std::vector<hsi::AnnotatedSample>& source,
                         const std::vector<hsi::AnnotatedSample>& target)
    : cfg_(cfg) {
    if (source.empty()) throw TrainError("source dataset is empty");
    if (uses_target(cfg.ablation) && target.empty()) throw TrainError("target dataset is empty");

    bands_ = cfg.bands;
    if (bands_ == 0) bands_ = target.empty() ? source.front().cube().bands : target.front().cube().bands;
    width_ = source.front().cube().width;
    height_ = source.front().cube().height;

    auto check = [&](const hsi::HyperCube& cube, const std::string& id) {
        if (cube.bands != bands_) {
            throw TrainError("cube " + id + " has " + std::to_string(cube.bands) + " bands after matching, expected " +
                             std::to_string(bands_));
        }
        if (cube.width != width_ || cube.height != height_) {
            throw TrainError("cube " + id + " is " + std::to_string(cube.width) + "x" + std::to_string(cube.height) +
                             ", expected " + std::to_string(width_) + "x" + std::to_string(height_));
        }
    };

    int max_class = 0;
    for (const auto& s : source) {
        const auto cube = hsi::match_bands(s.cube(), bands_);
        check(cube, s.id());
        for (int c : s.classes()) {
            if (c < 1) throw TrainError("sample " + s.id() + " has category id " + std::to_string(c) + "; ids start at 1");
            max_class = std::max(max_class, c);
        }
        source_.push_back({standardize(cube), s.boxes(), s.classes()});
    }
    num_classes_ = cfg.num_classes != 0 ? cfg.num_classes : static_cast<std::size_t>(std::max(max_class, 1));
    if (static_cast<std::size_t>(max_class) > num_classes_) {
        throw TrainError("source labels use category " + std::to_string(max_class) + " but num_classes is " +
                         std::to_string(num_classes_));
    }
    if (uses_target(cfg.ablation)) {
        for (const auto& s : target) {
            check(s.cube(), s.id());
            target_.push_back({standardize(s.cube()), {}, {}});
        }
    }
}

namespace {

// Mirrors a band-sequential cube and its boxes in place.
void flip(std::vector<float>& v, std::vector<Box>& boxes, std::size_t bands, std::size_t h, std::size_t w,
          bool horizontal) {
    for (std::size_t b = 0; b < bands; ++b) {
        float* plane = v.data() + b * h * w;
        if (horizontal) {
            for (std::size_t y = 0; y < h; ++y) std::reverse(plane + y * w, plane + (y + 1) * w);
        } else {
            for (std::size_t y = 0; y < h / 2; ++y) {
                std::swap_ranges(plane + y * w, plane + (y + 1) * w, plane + (h - 1 - y) * w);
            }
        }
    }
    for (auto& box : boxes) {
        if (horizontal) {
            box.x = static_cast<float>(w) - box.x - box.w;
        } else {
            box.y = static_cast<float>(h) - box.y - box.h;
        }
    }
}

}  // namespace

Batch BatchSource::make(std::size_t step) const {
    std::mt19937_64 rng(mix(cfg_.seed, 6, step));
    const std::size_t B = cfg_.batch_size;
    const std::size_t plane = static_cast<std::size_t>(width_) * height_;
    const std::size_t per = plane * bands_;
    Batch batch;

    auto assemble = [&](const std::vector<Item>& items, bool labels) {
        std::vector<float> data(B * per);
        std::uniform_int_distribution<std::size_t> pick(0, items.size() - 1);
        std::bernoulli_distribution coin(0.5);
        for (std::size_t n = 0; n < B; ++n) {
            const Item& it = items[pick(rng)];
            std::vector<float> v = it.values;
            std::vector<Box> boxes = it.boxes;
            if (cfg_.augment) {
                if (coin(rng)) flip(v, boxes, bands_, height_, width_, true);
                if (coin(rng)) flip(v, boxes, bands_, height_, width_, false);
            }
            std::copy(v.begin(), v.end(), data.begin() + static_cast<std::ptrdiff_t>(n * per));
            if (labels) {
                batch.source_boxes.push_back(std::move(boxes));
                batch.source_classes.push_back(it.classes);
            }
        }
        return Tensor({B, std::size_t{bands_}, std::size_t{height_}, std::size_t{width_}}, std::move(data));
    };

    batch.source = assemble(source_, true);
    if (uses_target(cfg_.ablation)) batch.target = assemble(target_, false);
    return batch;
}

// ---- training loop ----

std::size_t worker_threads() {
    if (const char* env = std::getenv("SFA_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

// Bounded single-producer queue of prepared batches.
class Prefetcher {
public:
    Prefetcher(const BatchSource& src, std::size_t steps, std::size_t capacity)
        : src_(src), steps_(steps), capacity_(capacity), worker_([this] { run(); }) {}

    ~Prefetcher() {
        {
            std::lock_guard lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        worker_.join();
    }

    Batch next() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !queue_.empty() || error_; });
        if (queue_.empty()) std::rethrow_exception(error_);
        Batch b = std::move(queue_.front());
        queue_.pop_front();
        cv_.notify_all();
        return b;
    }

private:
    void run() {
        try {
            for (std::size_t s = 0; s < steps_; ++s) {
                Batch b = src_.make(s);
                std::unique_lock lock(mu_);
                cv_.wait(lock, [&] { return queue_.size() < capacity_ || stop_; });
                if (stop_) return;
                queue_.push_back(std::move(b));
                cv_.notify_all();
            }
        } catch (...) {
            std::lock_guard lock(mu_);
            error_ = std::current_exception();
            cv_.notify_all();
        }
    }

    const BatchSource& src_;
    std::size_t steps_;
    std::size_t capacity_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Batch> queue_;
    std::exception_ptr error_;
    bool stop_ = false;
    std::thread worker_;  // last: starts after the other members exist
};

}  // namespace

TrainResult train(const TrainConfig& cfg_in, const std::vector<hsi::AnnotatedSample>& source,
                  const std::vector<hsi::AnnotatedSample>& target, const TrainOptions& options) {
    cfg_in.validate();
    hsi::TrainingLabelFirewall firewall;
    const BatchSource data(cfg_in, source, target);
    TrainConfig cfg = cfg_in;
    cfg.bands = data.bands();
    cfg.num_classes = data.num_classes();

    TrainState state(Model::init(cfg));
    TrainResult result;
    std::optional<Prefetcher> prefetch;
    if (worker_threads() > 1) prefetch.emplace(data, cfg.iterations, 2);
    for (std::size_t s = 0; s < cfg.iterations; ++s) {
        const Batch batch = prefetch ? prefetch->next() : data.make(s);
        result.curve.push_back(train_step(batch, state));
        if (options.on_step) options.on_step(result.curve.back());
    }

    if (!options.loss_csv.empty()) {
        std::string csv = std::string(kLossCsvHeader) + "\n";
        for (const auto& b : result.curve) csv += loss_csv_row(b) + "\n";
        le::write_file_atomic(options.loss_csv.string(),
                              std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
    }
    result.model = std::move(state.model);
    if (!options.checkpoint.empty()) save_checkpoint(result.model, options.checkpoint);
    return result;
}

// ---- inference ----

namespace {

detect::DetectionSet infer_one(const Model& m, const hsi::HyperCube& cube) {
    if (cube.bands != m.config.bands) {
        throw TrainError("cube has " + std::to_string(cube.bands) + " bands, model expects " +
                         std::to_string(m.config.bands) + "; run band matching first");
    }
    ad::NoGradGuard ng;
    const Tensor x({1, std::size_t{cube.bands}, std::size_t{cube.height}, std::size_t{cube.width}}, standardize(cube));
    const auto out = ssam::ssam_forward(x, m.ssam, {false, false, m.config.grl_scale});
    const auto fpn = levels_of(out);
    const auto rpn = detect::rpn_forward(fpn, m.rpn);
    detect::ProposalConfig pc;
    pc.post_nms = m.config.test_proposals;
    const auto W = static_cast<float>(cube.width), H = static_cast<float>(cube.height);
    const auto boxes = detect::propose(detect::gather_image(rpn, 0), anchors_for(cube.height, cube.width), W, H, pc);
    if (boxes.empty()) return {};
    std::vector<detect::Roi> rois;
    for (const auto& b : boxes) rois.push_back({0, b});
    const auto roi = detect::roi_forward(fpn, rois, m.roi);
    detect::InferenceConfig ic;
    ic.score_floor = m.config.score_floor;
    return detect::roi_detections(roi, rois, W, H, ic);
}

}  // namespace

std::vector<detect::DetectionSet> infer(const Model& model, const std::vector<hsi::HyperCube>& cubes) {
    std::vector<detect::DetectionSet> out(cubes.size());
    const std::size_t workers = std::min(worker_threads(), cubes.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < cubes.size(); ++i) out[i] = infer_one(model, cubes[i]);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i; (i = next.fetch_add(1)) < cubes.size();) out[i] = infer_one(model, cubes[i]);
            } catch (...) {
                errors[w] = std::current_exception();
                next = cubes.size();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

}  // namespace sfa::trainer
