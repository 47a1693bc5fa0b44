#pragma once

#include <array>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfa/detect/detections_json.hpp"
#include "sfa/hsi/annotations.hpp"

namespace sfa::eval {

class EvalError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class SizeBucket { small, medium, large };

// small: area < 32^2; medium: 32^2 <= area < 96^2; large: area >= 96^2.
SizeBucket size_bucket(const Box& box);
const char* bucket_name(SizeBucket b);

struct GroundTruth {
    int image_id = 0;
    std::vector<Box> boxes;
    std::vector<int> classes;
};

// Reads labels through the guarded accessors; call outside training.
std::vector<GroundTruth> ground_truth_of(const std::vector<hsi::AnnotatedSample>& samples);

struct EvalConfig {
    std::vector<double> iou_thresholds;  // default 0.50:0.05:0.95
    std::size_t recall_points = 101;
    std::size_t max_detections = 100;  // per image and class

    static EvalConfig coco();
};

struct ClassMetrics {
    double ap50 = 0.0;
    double ap = 0.0;
    double ar = 0.0;
    std::size_t gt_count = 0;
};

struct EvalReport {
    double ap50 = 0.0;
    double ap = 0.0;  // mean over IoU 0.50:0.95
    std::array<double, 3> ap_size{};  // small, medium, large
    double ar = 0.0;
    std::array<double, 3> ar_size{};
    std::array<std::size_t, 3> gt_size_count{};
    std::map<int, ClassMetrics> per_class;  // keyed by category id
};

// COCO-style evaluation: greedy matching by descending score per IoU threshold, interpolated
// precision at evenly spaced recall points, recall at the detection cap. A metric with no ground truth
// to measure against reports 0. Throws EvalError when an image id appears twice in either list or
// detections name an image without ground truth.
EvalReport evaluate(const std::vector<detect::ImageDetections>& dets, const std::vector<GroundTruth>& gt,
                    const EvalConfig& cfg = EvalConfig::coco());

// Single (IoU threshold, class, size range) cell; exposed for tests. Returns the interpolated
// precision values and the final recall, or an empty vector when no gt is counted.
struct CellResult {
    std::vector<double> precision;  // one per recall point
    double recall = 0.0;
    bool defined = false;
};
CellResult evaluate_cell(const std::vector<detect::ImageDetections>& dets, const std::vector<GroundTruth>& gt,
                         int category, double iou_threshold, double min_area, double max_area,
                         const EvalConfig& cfg);

std::string format_report(const EvalReport& r, const std::map<int, std::string>& class_names = {});
std::string report_json(const EvalReport& r);

}  // namespace sfa::eval
