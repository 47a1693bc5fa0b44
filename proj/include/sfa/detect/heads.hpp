#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "sfa/autodiff/layers.hpp"
#include "sfa/detect/boxes.hpp"
#include "sfa/ssam/checkpoint.hpp"

namespace sfa::detect {

// ---- RPN ----

struct RpnParams {
    ad::ConvLayer shared;      // 3x3, relu
    ad::ConvLayer objectness;  // 1x1 -> A channels
    ad::ConvLayer deltas;      // 1x1 -> 4A channels, channel a*4 + k

    static RpnParams init(std::size_t in_channels, std::size_t hidden, std::size_t num_anchors, std::uint64_t seed);
    NamedTensors named() const;
    std::vector<ad::Tensor> tensors() const;
};

struct RpnLevelOutput {
    ad::Tensor logits;  // [N, A, H, W]
    ad::Tensor deltas;  // [N, 4A, H, W]
};

// One head shared by every level.
std::vector<RpnLevelOutput> rpn_forward(const std::vector<ad::Tensor>& fpn_levels, const RpnParams& params);

// Per-image views with anchors in AnchorSet order (level-major): logits [M], deltas [M*4] anchor-major.
struct RpnImageOutput {
    ad::Tensor logits;
    ad::Tensor deltas;
};
RpnImageOutput gather_image(const std::vector<RpnLevelOutput>& levels, std::size_t image);

struct RpnLossConfig {
    double positive_iou = 0.7;
    double negative_iou = 0.3;
    std::size_t batch = 32;
    double positive_fraction = 0.5;
    float smooth_l1_beta = 1.0f / 9.0f;
};

struct AnchorSample {
    std::vector<std::size_t> indices;  // sampled anchors, positives first
    std::vector<float> labels;         // 1 or 0 per sampled anchor
    std::vector<BoxDelta> targets;     // one per positive, in the same order
    std::size_t positives = 0;
};

// Positive: IoU >= positive_iou with some gt, or the best anchor of a gt. Negative: max IoU <= negative_iou.
// With no gt every anchor is negative.
AnchorSample sample_anchors(const std::vector<Box>& anchors, const std::vector<Box>& gt, const RpnLossConfig& cfg,
                            std::mt19937_64& rng);

// BCE averaged over sampled anchors plus smooth-L1 on positive deltas divided by the sample count.
ad::Tensor rpn_image_loss(const RpnImageOutput& out, const std::vector<Box>& anchors, const AnchorSample& sample,
                          const RpnLossConfig& cfg);

// Anchor and region sampling for image n draws from this generator.
std::mt19937_64 sampling_rng(std::uint64_t seed, std::size_t image);

// Mean of rpn_image_loss over the batch, image n sampled with sampling_rng(seed, n).
ad::Tensor rpn_loss(const std::vector<RpnLevelOutput>& levels, const AnchorSet& anchors,
                    const std::vector<std::vector<Box>>& gt_boxes, const RpnLossConfig& cfg, std::uint64_t seed);

struct ProposalConfig {
    std::size_t pre_nms = 300;
    double nms_iou = 0.7;
    std::size_t post_nms = 64;
    float min_size = 1.0f;
};

// Class-agnostic proposals for one image, highest objectness first. No gradient.
std::vector<Box> propose(const RpnImageOutput& out, const AnchorSet& anchors, float image_width, float image_height,
                         const ProposalConfig& cfg);

// ---- ROI head ----

inline constexpr std::size_t kRoiPool = 4;
inline constexpr std::size_t kRoiSampling = 2;
inline constexpr BoxCoderWeights kRoiCoderWeights{10, 10, 5, 5};

struct RoiParams {
    std::size_t num_classes = 1;  // foreground classes; logit 0 is background
    ad::LinearLayer fc;
    ad::LinearLayer cls;  // -> num_classes + 1
    ad::LinearLayer reg;  // -> 4 * num_classes, class c (1-based) at columns 4(c-1)..4(c-1)+3

    // Class bias starts at a background prior so each foreground class begins at probability `prior`.
    static RoiParams init(std::size_t in_channels, std::size_t hidden, std::size_t num_classes, std::uint64_t seed,
                          float prior = 0.01f);
    NamedTensors named() const;
    std::vector<ad::Tensor> tensors() const;
};

struct Roi {
    std::size_t image = 0;
    Box box;
};

// floor(log2(sqrt(area) / 16)) + 1 clamped to [1, 3].
std::size_t roi_level(const Box& box);

struct RoiOutput {
    ad::Tensor class_logits;  // [R, K+1]
    ad::Tensor deltas;        // [R, 4K]
};

// fpn_levels has strides 2, 4, 8. Output rows follow the input order.
RoiOutput roi_forward(const std::vector<ad::Tensor>& fpn_levels, const std::vector<Roi>& rois,
                      const RoiParams& params);

struct RoiLossConfig {
    double foreground_iou = 0.5;
    std::size_t batch = 64;
    double foreground_fraction = 0.25;
    float smooth_l1_beta = 1.0f;
};

struct RoiSample {
    std::vector<Roi> rois;
    std::vector<int> labels;        // 0 background, else category id
    std::vector<BoxDelta> targets;  // per roi; zero for background
};

// Sampling per image over proposals (gt boxes are appended as proposals).
RoiSample sample_rois(const std::vector<std::vector<Box>>& proposals, const std::vector<std::vector<Box>>& gt_boxes,
                      const std::vector<std::vector<int>>& gt_classes, const RoiLossConfig& cfg, std::uint64_t seed);

// Mean cross-entropy plus smooth-L1 on the labelled class's deltas of foreground rows, divided by R.
ad::Tensor roi_loss(const RoiOutput& out, const std::vector<int>& labels, const std::vector<BoxDelta>& targets,
                    float smooth_l1_beta = 1.0f);

struct InferenceConfig {
    float score_floor = 0.05f;
    double nms_iou = 0.5;
    std::size_t max_detections = 100;
};

// Softmax scores, per-class decoding and NMS for the rois of one image.
DetectionSet roi_detections(const RoiOutput& out, const std::vector<Roi>& rois, float image_width,
                            float image_height, const InferenceConfig& cfg);

}  // namespace sfa::detect
