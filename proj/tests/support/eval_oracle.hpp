#pragma once

#include <cstdint>
#include <vector>

#include "sfa/eval/eval.hpp"

namespace sfa::testing {

// Exhaustive reference evaluator: every injective detection-to-gt assignment per image is
// enumerated and interpolated precision is taken straight from its definition. Only practical
// for a handful of boxes per image.
eval::EvalReport oracle_report(const std::vector<detect::ImageDetections>& dets,
                               const std::vector<eval::GroundTruth>& gt);

// Random evaluation instance: 1-2 images, 1-2 classes, at most 5 gt and 5 detections, box sides
// straddling every size-bucket edge, coarse scores so ties occur.
struct Instance {
    std::vector<detect::ImageDetections> dets;
    std::vector<eval::GroundTruth> gt;
};
Instance random_instance(std::uint32_t seed);

// Exact equality of every headline, size-bucket and per-class value.
bool same_report(const eval::EvalReport& a, const eval::EvalReport& b);

}  // namespace sfa::testing
