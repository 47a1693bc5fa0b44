#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "sfa/hsi/box.hpp"

namespace sfa::detect {

struct AnchorLevel {
    std::size_t stride = 0;
    std::size_t height = 0;  // feature-map rows
    std::size_t width = 0;
    // Index a * (height*width) + y * width + x, matching an [N, A, H, W] head output.
    std::vector<Box> anchors;
};

struct AnchorSet {
    std::vector<AnchorLevel> levels;
    std::size_t total() const;
};

struct AnchorSpec {
    std::vector<std::size_t> strides{2, 4, 8};
    std::vector<float> base_sizes{16, 32, 64};
    std::vector<float> ratios{0.5f, 1.0f, 2.0f};  // height / width
};

// Anchors centred on each cell of a feature map; the map sizes follow from the image size and strides.
AnchorSet make_anchors(std::size_t image_height, std::size_t image_width, const AnchorSpec& spec = {});

// Parameterized regression target, scaled by per-coordinate weights.
struct BoxDelta {
    float dx = 0, dy = 0, dw = 0, dh = 0;
};

using BoxCoderWeights = std::array<float, 4>;

BoxDelta encode(const Box& box, const Box& reference, const BoxCoderWeights& weights = {1, 1, 1, 1});
// dw and dh are clamped so exp() stays finite.
Box decode(const BoxDelta& delta, const Box& reference, const BoxCoderWeights& weights = {1, 1, 1, 1});

Box clip(const Box& b, float image_width, float image_height);

struct DetectionSet {
    std::vector<Box> boxes;
    std::vector<float> scores;
    std::vector<int> classes;

    std::size_t size() const { return boxes.size(); }
    void push(const Box& b, float score, int cls);
};

// Greedy suppression in descending score order; a box is dropped when its IoU with a kept box
// exceeds the threshold. Equal scores keep input order. Output is sorted by score.
DetectionSet nms(const DetectionSet& dets, double iou_threshold);

// Indices kept by greedy NMS over boxes already sorted by descending score.
std::vector<std::size_t> nms_sorted(const std::vector<Box>& boxes, double iou_threshold);

}  // namespace sfa::detect
