#pragma once

#include <cstdint>
#include <vector>

#include "sfa/hsi/cube.hpp"

namespace sfa::hsi {

// Source band index feeding each output band when resampling `bands` to `target_bands`.
//  - expansion: deficit d = target - bands; floor(d/2) copies of band 0 in front,
//    the rest as copies of the last band at the back.
//  - reduction: round(i * (bands - 1) / (target - 1)); index 0 when target == 1.
std::vector<std::uint32_t> band_match_indices(std::uint32_t bands, std::uint32_t target_bands);

// Spectral resolution metadata follows the selection; values are copied, never interpolated.
HyperCube match_bands(const HyperCube& cube, std::uint32_t target_bands);

}  // namespace sfa::hsi
