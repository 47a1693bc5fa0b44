#include "sfa/hsi/band_match.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace sfa::hsi {

std::vector<std::uint32_t> band_match_indices(std::uint32_t bands, std::uint32_t target_bands) {
    if (bands == 0 || target_bands == 0) {
        throw std::invalid_argument("band matching needs at least one band on both sides");
    }
    std::vector<std::uint32_t> idx;
    idx.reserve(target_bands);
    if (bands < target_bands) {
        const std::uint32_t deficit = target_bands - bands;
        const std::uint32_t front = deficit / 2;
        const std::uint32_t back = deficit - front;
        idx.insert(idx.end(), front, 0u);
        for (std::uint32_t b = 0; b < bands; ++b) {
            idx.push_back(b);
        }
        idx.insert(idx.end(), back, bands - 1);
    } else if (bands > target_bands) {
        if (target_bands == 1) {
            idx.push_back(0);
        } else {
            for (std::uint32_t i = 0; i < target_bands; ++i) {
                const double pos = static_cast<double>(i) * (bands - 1) / (target_bands - 1);
                idx.push_back(static_cast<std::uint32_t>(std::lround(pos)));
            }
        }
    } else {
        for (std::uint32_t b = 0; b < bands; ++b) {
            idx.push_back(b);
        }
    }
    return idx;
}

HyperCube match_bands(const HyperCube& cube, std::uint32_t target_bands) {
    if (target_bands == 0) {
        throw std::invalid_argument("target band count must be at least 1");
    }
    if (cube.bands == target_bands) {
        return cube;
    }
    const auto idx = band_match_indices(cube.bands, target_bands);
    HyperCube out;
    out.width = cube.width;
    out.height = cube.height;
    out.bands = target_bands;
    // Downsampling widens the nominal spacing; expansion keeps the native sampling.
    out.spectral_resolution = cube.bands > target_bands && target_bands > 1
                                  ? cube.spectral_resolution * static_cast<float>(cube.bands - 1) /
                                        static_cast<float>(target_bands - 1)
                                  : cube.spectral_resolution;
    out.values.reserve(cube.plane_size() * target_bands);
    for (auto b : idx) {
        const auto plane = cube.band(b);
        out.values.insert(out.values.end(), plane.begin(), plane.end());
    }
    return out;
}

}  // namespace sfa::hsi
