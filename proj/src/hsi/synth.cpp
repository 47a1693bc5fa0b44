#include "sfa/hsi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sfa::hsi {

float SpectralCurve::operator()(float t) const {
    double v = base + slope * t;
    for (const auto& b : bumps) {
        const double d = (t - b.center) / b.width;
        v += b.amplitude * std::exp(-0.5 * d * d);
    }
    return static_cast<float>(v);
}

std::vector<float> SpectralCurve::sample(std::uint32_t bands) const {
    std::vector<float> out(bands);
    for (std::uint32_t i = 0; i < bands; ++i) {
        const float t = bands == 1 ? 0.5f : static_cast<float>(i) / static_cast<float>(bands - 1);
        out[i] = (*this)(t);
    }
    return out;
}

double spectral_angle(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size() || a.empty()) {
        throw std::invalid_argument("spectral_angle needs two spectra of equal, non-zero length");
    }
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0 || nb == 0) {
        return 0.0;
    }
    return std::acos(std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0));
}

namespace {

void validate_domain(const DomainSpec& d, const char* name, const SynthConfig& cfg) {
    const std::string who = name;
    if (d.bands == 0) {
        throw SynthConfigError(who + " domain needs at least one band");
    }
    if (d.count == 0) {
        throw SynthConfigError(who + " domain must contain at least one image");
    }
    if (d.backgrounds.empty()) {
        throw SynthConfigError(who + " domain has an empty background pool");
    }
    if (!(d.size_scale > 0) || !(d.noise_sigma >= 0) || !(d.brightness_min > 0) || !(d.background_gain > 0) ||
        d.brightness_max < d.brightness_min) {
        throw SynthConfigError(who + " domain has invalid scale, noise or brightness range");
    }
    if (cfg.min_size * d.size_scale < 2.0f) {
        throw SynthConfigError(who + " domain: smallest object would be under 2 pixels");
    }
    if (cfg.min_size * d.size_scale > static_cast<float>(cfg.image_size)) {
        throw SynthConfigError(who + " domain: smallest object does not fit in the image");
    }
    for (const auto& m : cfg.materials) {
        const auto ms = m.curve.sample(d.bands);
        for (const auto& bg : d.backgrounds) {
            const double angle = spectral_angle(ms, bg.sample(d.bands));
            if (angle < cfg.angle_margin) {
                throw SynthConfigError(who + " domain: material '" + m.name + "' is within " +
                                       std::to_string(angle) + " rad of a background, below the margin");
            }
        }
    }
}

struct Placed {
    int x, y, w, h;
};

bool overlaps(const Placed& a, const Placed& b, int gap) {
    return a.x < b.x + b.w + gap && b.x < a.x + a.w + gap && a.y < b.y + b.h + gap && b.y < a.y + a.h + gap;
}

AnnotatedSample render(const SynthConfig& cfg, const DomainSpec& dom, std::mt19937_64& rng, std::size_t index,
                       bool held_out) {
    const int size = static_cast<int>(cfg.image_size);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    std::uniform_real_distribution<float> bright(dom.brightness_min, dom.brightness_max);
    std::normal_distribution<float> noise(0.0f, dom.noise_sigma);
    std::uniform_int_distribution<std::size_t> pick_bg(0, dom.backgrounds.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_mat(0, cfg.materials.size() - 1);
    std::uniform_int_distribution<std::uint32_t> pick_count(cfg.min_objects, cfg.max_objects);

    const float nm_span = cfg.wavelength_max_nm - cfg.wavelength_min_nm;
    HyperCube cube = HyperCube::zeros(cfg.image_size, cfg.image_size, dom.bands,
                                      dom.bands > 1 ? nm_span / static_cast<float>(dom.bands - 1) : nm_span);

    const auto bg = dom.backgrounds[pick_bg(rng)].sample(dom.bands);
    const float bg_gain = bright(rng) * dom.background_gain;
    for (std::uint32_t b = 0; b < dom.bands; ++b) {
        for (std::uint32_t p = 0; p < cube.plane_size(); ++p) {
            cube.values[b * cube.plane_size() + p] = bg[b] * bg_gain;
        }
    }

    std::vector<Placed> placed;
    std::vector<Box> boxes;
    std::vector<int> classes;
    const std::uint32_t wanted = pick_count(rng);
    const float log_lo = std::log(cfg.min_size);
    const float log_hi = std::log(cfg.max_size);
    for (std::uint32_t k = 0; k < wanted; ++k) {
        for (int attempt = 0; attempt < 64; ++attempt) {
            const float side = std::exp(log_lo + (log_hi - log_lo) * unit(rng)) * dom.size_scale;
            const float aspect = std::exp((unit(rng) - 0.5f) * 0.8f);
            const int w = std::clamp(static_cast<int>(std::lround(side * aspect)), 2, size);
            const int h = std::clamp(static_cast<int>(std::lround(side / aspect)), 2, size);
            std::uniform_int_distribution<int> px(0, size - w);
            std::uniform_int_distribution<int> py(0, size - h);
            Placed cand{px(rng), py(rng), w, h};
            const bool ellipse = unit(rng) < cfg.ellipse_fraction;
            const std::size_t mat = pick_mat(rng);
            const float gain = bright(rng);
            if (std::any_of(placed.begin(), placed.end(), [&](const Placed& o) { return overlaps(cand, o, 2); })) {
                continue;
            }
            const auto sig = cfg.materials[mat].curve.sample(dom.bands);
            const float cx = static_cast<float>(cand.x) + 0.5f * static_cast<float>(w);
            const float cy = static_cast<float>(cand.y) + 0.5f * static_cast<float>(h);
            for (int y = cand.y; y < cand.y + h; ++y) {
                for (int x = cand.x; x < cand.x + w; ++x) {
                    if (ellipse) {
                        const float dx = (static_cast<float>(x) + 0.5f - cx) / (0.5f * static_cast<float>(w));
                        const float dy = (static_cast<float>(y) + 0.5f - cy) / (0.5f * static_cast<float>(h));
                        if (dx * dx + dy * dy > 1.0f) {
                            continue;
                        }
                    }
                    for (std::uint32_t b = 0; b < dom.bands; ++b) {
                        cube.at(b, static_cast<std::uint32_t>(y), static_cast<std::uint32_t>(x)) = sig[b] * gain;
                    }
                }
            }
            placed.push_back(cand);
            boxes.push_back({static_cast<float>(cand.x), static_cast<float>(cand.y), static_cast<float>(w),
                             static_cast<float>(h)});
            classes.push_back(cfg.materials[mat].category);
            break;
        }
    }
    for (auto& v : cube.values) {
        v += noise(rng);
    }
    return AnnotatedSample(std::to_string(index), std::move(cube), std::move(boxes), std::move(classes), held_out);
}

}  // namespace

void SynthConfig::validate() const {
    if (image_size < 8) {
        throw SynthConfigError("image_size must be at least 8");
    }
    if (materials.empty()) {
        throw SynthConfigError("no object materials configured");
    }
    if (min_objects == 0 || max_objects < min_objects) {
        throw SynthConfigError("object count range must satisfy 1 <= min_objects <= max_objects");
    }
    if (!(min_size > 0) || max_size < min_size) {
        throw SynthConfigError("object size range must satisfy 0 < min_size <= max_size");
    }
    for (const auto& m : materials) {
        const bool known = std::any_of(categories.begin(), categories.end(),
                                       [&](const Category& c) { return c.id == m.category; });
        if (!known) {
            throw SynthConfigError("material '" + m.name + "' uses undeclared category " +
                                   std::to_string(m.category));
        }
    }
    validate_domain(source, "source", *this);
    validate_domain(target, "target", *this);
}

DomainPair generate_domain_pair(const SynthConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    DomainPair pair;
    for (std::uint32_t i = 0; i < config.source.count; ++i) {
        pair.source.push_back(render(config, config.source, rng, i, false));
    }
    for (std::uint32_t i = 0; i < config.target.count; ++i) {
        pair.target.push_back(render(config, config.target, rng, i, true));
    }
    return pair;
}

SynthConfig reference_synth_config() {
    using Bump = SpectralCurve::Bump;
    SynthConfig cfg;
    cfg.categories = {{1, "ship"}};
    cfg.materials = {
        {"painted-steel", 1, {0.20f, 0.10f, {Bump{0.55f, 0.18f, 0.12f}}}},
        {"wood", 1, {0.12f, 0.30f, {Bump{0.80f, 0.10f, 0.10f}}}},
    };
    cfg.source.bands = 30;
    cfg.source.count = 48;
    cfg.source.size_scale = 1.0f;
    cfg.source.noise_sigma = 0.01f;
    cfg.source.backgrounds = {
        {0.04f, -0.03f, {Bump{0.15f, 0.12f, 0.06f}}},
        {0.05f, -0.04f, {Bump{0.20f, 0.10f, 0.05f}}},
    };
    cfg.target.bands = 60;
    cfg.target.count = 48;
    cfg.target.size_scale = 1.3f;
    cfg.target.noise_sigma = 0.02f;
    cfg.target.brightness_min = 0.8f;
    cfg.target.brightness_max = 1.2f;
    cfg.target.background_gain = 2.0f;
    cfg.target.backgrounds = {
        {0.07f, -0.04f, {Bump{0.30f, 0.15f, 0.08f}}},
        {0.09f, -0.05f, {Bump{0.35f, 0.12f, 0.06f}, Bump{0.75f, 0.08f, 0.02f}}},
    };
    return cfg;
}

}  // namespace sfa::hsi
