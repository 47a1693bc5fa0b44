#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfa/detect/boxes.hpp"

namespace sfa::detect {

class DetectionFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ImageDetections {
    int image_id = 0;
    DetectionSet detections;
};

// Flat array of {"image_id", "bbox": [x, y, w, h], "score", "category_id"}.
std::string dump_detections(const std::vector<ImageDetections>& images);
// Groups records by image_id in order of first appearance.
std::vector<ImageDetections> parse_detections(const std::string& json_text);
void save_detections(const std::vector<ImageDetections>& images, const std::filesystem::path& path);
std::vector<ImageDetections> load_detections(const std::filesystem::path& path);

}  // namespace sfa::detect
