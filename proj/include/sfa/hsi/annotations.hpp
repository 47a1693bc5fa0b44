#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfa/hsi/box.hpp"
#include "sfa/hsi/cube.hpp"

namespace sfa::hsi {

class AnnotationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
// Unparseable JSON or missing/mistyped fields.
class AnnotationFormatError : public AnnotationError {
public:
    using AnnotationError::AnnotationError;
};
// A box that leaves its image or has non-positive extent.
class AnnotationBoundsError : public AnnotationError {
public:
    using AnnotationError::AnnotationError;
};

struct Category {
    int id = 0;
    std::string name;
    friend bool operator==(const Category&, const Category&) = default;
};

struct ImageLabels {
    int id = 0;
    std::string file;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t bands = 0;
    std::vector<Box> boxes;
    std::vector<int> classes;
    friend bool operator==(const ImageLabels&, const ImageLabels&) = default;
};

struct AnnotationFile {
    std::vector<ImageLabels> images;
    std::vector<Category> categories;
    // Target-domain labels: kept for evaluation, never for training.
    bool held_out = false;
    friend bool operator==(const AnnotationFile&, const AnnotationFile&) = default;
};

// Throws AnnotationBoundsError for boxes outside [0,W]x[0,H] or with w,h <= 0.
void validate_boxes(const std::vector<Box>& boxes, std::uint32_t width, std::uint32_t height,
                    const std::string& where);

std::string dump_annotations(const AnnotationFile& file);
AnnotationFile parse_annotations(const std::string& json_text);
void save_annotations(const AnnotationFile& file, const std::filesystem::path& path);
AnnotationFile load_annotations(const std::filesystem::path& path);

// A cube with its labels, the (x, y) training pair. Labels of held-out samples
// are reachable only through guarded accessors.
class AnnotatedSample {
public:
    AnnotatedSample() = default;
    AnnotatedSample(std::string id, HyperCube cube, std::vector<Box> boxes, std::vector<int> classes,
                    bool held_out = false);

    const std::string& id() const { return id_; }
    const HyperCube& cube() const { return cube_; }
    HyperCube& mutable_cube() { return cube_; }
    bool held_out() const { return held_out_; }

    const std::vector<Box>& boxes() const;
    const std::vector<int>& classes() const;

private:
    std::string id_;
    HyperCube cube_;
    std::vector<Box> boxes_;
    std::vector<int> classes_;
    bool held_out_ = false;
};

// Reads <dir>/annotations.json and the cubes it references (paths relative to dir).
std::vector<AnnotatedSample> load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::vector<AnnotatedSample>& samples, const std::vector<Category>& categories,
                  const std::filesystem::path& dir);

}  // namespace sfa::hsi
