#include "sfa/detect/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace sfa::detect {

std::size_t AnchorSet::total() const {
    std::size_t n = 0;
    for (const auto& l : levels) n += l.anchors.size();
    return n;
}

AnchorSet make_anchors(std::size_t image_height, std::size_t image_width, const AnchorSpec& spec) {
    if (spec.strides.size() != spec.base_sizes.size() || spec.ratios.empty()) {
        throw std::invalid_argument("anchor spec needs one base size per stride and at least one ratio");
    }
    AnchorSet set;
    for (std::size_t l = 0; l < spec.strides.size(); ++l) {
        const std::size_t s = spec.strides[l];
        if (s == 0 || image_height % s != 0 || image_width % s != 0) {
            throw std::invalid_argument("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                                        " is not divisible by anchor stride " + std::to_string(s));
        }
        AnchorLevel level;
        level.stride = s;
        level.height = image_height / s;
        level.width = image_width / s;
        level.anchors.reserve(spec.ratios.size() * level.height * level.width);
        for (float r : spec.ratios) {
            const float w = spec.base_sizes[l] / std::sqrt(r);
            const float h = spec.base_sizes[l] * std::sqrt(r);
            for (std::size_t y = 0; y < level.height; ++y) {
                for (std::size_t x = 0; x < level.width; ++x) {
                    const float cx = (static_cast<float>(x) + 0.5f) * static_cast<float>(s);
                    const float cy = (static_cast<float>(y) + 0.5f) * static_cast<float>(s);
                    level.anchors.push_back({cx - 0.5f * w, cy - 0.5f * h, w, h});
                }
            }
        }
        set.levels.push_back(std::move(level));
    }
    return set;
}

namespace {

const float kMaxLogScale = std::log(1000.0f / 16.0f);

}  // namespace

BoxDelta encode(const Box& box, const Box& ref, const BoxCoderWeights& wt) {
    const double rcx = ref.x + 0.5 * ref.w, rcy = ref.y + 0.5 * ref.h;
    const double bcx = box.x + 0.5 * box.w, bcy = box.y + 0.5 * box.h;
    return {static_cast<float>(wt[0] * (bcx - rcx) / ref.w), static_cast<float>(wt[1] * (bcy - rcy) / ref.h),
            static_cast<float>(wt[2] * std::log(static_cast<double>(box.w) / ref.w)),
            static_cast<float>(wt[3] * std::log(static_cast<double>(box.h) / ref.h))};
}

Box decode(const BoxDelta& d, const Box& ref, const BoxCoderWeights& wt) {
    const double rcx = ref.x + 0.5 * ref.w, rcy = ref.y + 0.5 * ref.h;
    const double cx = rcx + d.dx / wt[0] * ref.w;
    const double cy = rcy + d.dy / wt[1] * ref.h;
    const double w = ref.w * std::exp(std::min(d.dw / wt[2], kMaxLogScale));
    const double h = ref.h * std::exp(std::min(d.dh / wt[3], kMaxLogScale));
    return {static_cast<float>(cx - 0.5 * w), static_cast<float>(cy - 0.5 * h), static_cast<float>(w),
            static_cast<float>(h)};
}

Box clip(const Box& b, float image_width, float image_height) {
    const float x1 = std::clamp(b.x, 0.0f, image_width), y1 = std::clamp(b.y, 0.0f, image_height);
    const float x2 = std::clamp(b.x2(), 0.0f, image_width), y2 = std::clamp(b.y2(), 0.0f, image_height);
    return {x1, y1, std::max(0.0f, x2 - x1), std::max(0.0f, y2 - y1)};
}

void DetectionSet::push(const Box& b, float score, int cls) {
    boxes.push_back(b);
    scores.push_back(score);
    classes.push_back(cls);
}

std::vector<std::size_t> nms_sorted(const std::vector<Box>& boxes, double iou_threshold) {
    std::vector<std::size_t> keep;
    std::vector<bool> dead(boxes.size(), false);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        if (dead[i]) continue;
        keep.push_back(i);
        for (std::size_t j = i + 1; j < boxes.size(); ++j) {
            if (!dead[j] && iou(boxes[i], boxes[j]) > iou_threshold) dead[j] = true;
        }
    }
    return keep;
}

DetectionSet nms(const DetectionSet& dets, double iou_threshold) {
    for (float s : dets.scores) {
        if (!std::isfinite(s)) throw std::invalid_argument("nms: non-finite detection score");
    }
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets.scores[a] > dets.scores[b]; });
    std::vector<Box> sorted;
    for (auto i : order) sorted.push_back(dets.boxes[i]);
    DetectionSet out;
    for (auto k : nms_sorted(sorted, iou_threshold)) {
        const auto i = order[k];
        out.push(dets.boxes[i], dets.scores[i], dets.classes[i]);
    }
    return out;
}

}  // namespace sfa::detect
