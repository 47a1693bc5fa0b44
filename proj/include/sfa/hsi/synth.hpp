#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfa/hsi/annotations.hpp"

namespace sfa::hsi {

class SynthConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Smooth reflectance-like curve over normalized wavelength t in [0, 1]:
// base + slope * t + sum of Gaussian bumps.
struct SpectralCurve {
    struct Bump {
        float center = 0.5f;
        float width = 0.1f;
        float amplitude = 0.0f;
    };
    float base = 0.0f;
    float slope = 0.0f;
    std::vector<Bump> bumps;

    float operator()(float t) const;
    // Samples the curve at `bands` equally spaced wavelengths (t = i / (bands - 1)).
    std::vector<float> sample(std::uint32_t bands) const;
};

struct Material {
    std::string name;
    int category = 1;
    SpectralCurve curve;
};

struct DomainSpec {
    std::uint32_t bands = 30;
    std::uint32_t count = 48;
    float size_scale = 1.0f;  // multiplies object side lengths
    float noise_sigma = 0.02f;
    float brightness_min = 0.9f;
    float brightness_max = 1.1f;
    float background_gain = 1.0f;  // multiplies every background curve
    std::vector<SpectralCurve> backgrounds;
};

struct SynthConfig {
    std::uint32_t image_size = 64;
    float wavelength_min_nm = 400.0f;
    float wavelength_max_nm = 1000.0f;
    DomainSpec source;
    DomainSpec target;
    std::vector<Material> materials;
    std::vector<Category> categories;
    std::uint32_t min_objects = 1;
    std::uint32_t max_objects = 3;
    float min_size = 8.0f;   // side length before domain scaling, pixels
    float max_size = 28.0f;
    float ellipse_fraction = 0.5f;
    // Minimum spectral angle (radians) between every material and every background.
    float angle_margin = 0.15f;
    std::uint64_t seed = 7;

    // Throws SynthConfigError on a configuration that cannot yield labelled objects.
    void validate() const;
};

// Built-in material and background pools: one "ship" category made of two
// materials, clear-water backgrounds in the source domain and turbid-water
// backgrounds in the target domain.
SynthConfig reference_synth_config();

struct DomainPair {
    std::vector<AnnotatedSample> source;
    std::vector<AnnotatedSample> target;  // held out: labels only for evaluation
};

DomainPair generate_domain_pair(const SynthConfig& config);

// Angle between two spectra, radians.
double spectral_angle(std::span<const float> a, std::span<const float> b);

}  // namespace sfa::hsi
