#include "sfa/hsi/annotations.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <json.hpp>
#include <sstream>

#include "sfa/hsi/label_guard.hpp"

namespace sfa::hsi {

using nlohmann::json;

void validate_boxes(const std::vector<Box>& boxes, std::uint32_t width, std::uint32_t height,
                    const std::string& where) {
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const Box& b = boxes[i];
        const bool finite = std::isfinite(b.x) && std::isfinite(b.y) && std::isfinite(b.w) && std::isfinite(b.h);
        if (!finite || b.w <= 0 || b.h <= 0) {
            throw AnnotationBoundsError(where + ": box " + std::to_string(i) + " has non-positive extent");
        }
        if (b.x < 0 || b.y < 0 || b.x + b.w > static_cast<float>(width) || b.y + b.h > static_cast<float>(height)) {
            std::ostringstream msg;
            msg << where << ": box " << i << " [" << b.x << "," << b.y << "," << b.w << "," << b.h
                << "] exceeds image " << width << "x" << height;
            throw AnnotationBoundsError(msg.str());
        }
    }
}

std::string dump_annotations(const AnnotationFile& file) {
    json images = json::array();
    json annotations = json::array();
    for (const auto& img : file.images) {
        images.push_back({{"id", img.id},
                          {"file", img.file},
                          {"width", img.width},
                          {"height", img.height},
                          {"bands", img.bands}});
        for (std::size_t i = 0; i < img.boxes.size(); ++i) {
            const Box& b = img.boxes[i];
            annotations.push_back(
                {{"image_id", img.id}, {"bbox", {b.x, b.y, b.w, b.h}}, {"category_id", img.classes[i]}});
        }
    }
    json categories = json::array();
    for (const auto& c : file.categories) {
        categories.push_back({{"id", c.id}, {"name", c.name}});
    }
    json doc{{"images", images}, {"annotations", annotations}, {"categories", categories}};
    if (file.held_out) {
        doc["held_out"] = true;
    }
    return doc.dump(1);
}

AnnotationFile parse_annotations(const std::string& json_text) {
    AnnotationFile file;
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw AnnotationFormatError(std::string("malformed annotation JSON: ") + e.what());
    }
    try {
        if (!doc.is_object()) {
            throw AnnotationFormatError("annotation document must be a JSON object");
        }
        std::map<int, std::size_t> by_id;
        for (const auto& img : doc.at("images")) {
            ImageLabels rec;
            rec.id = img.at("id").get<int>();
            rec.file = img.at("file").get<std::string>();
            rec.width = img.at("width").get<std::uint32_t>();
            rec.height = img.at("height").get<std::uint32_t>();
            rec.bands = img.at("bands").get<std::uint32_t>();
            if (!by_id.emplace(rec.id, file.images.size()).second) {
                throw AnnotationFormatError("duplicate image id " + std::to_string(rec.id));
            }
            file.images.push_back(std::move(rec));
        }
        for (const auto& ann : doc.at("annotations")) {
            const int image_id = ann.at("image_id").get<int>();
            const auto it = by_id.find(image_id);
            if (it == by_id.end()) {
                throw AnnotationFormatError("annotation refers to unknown image id " + std::to_string(image_id));
            }
            const auto& bbox = ann.at("bbox");
            if (!bbox.is_array() || bbox.size() != 4) {
                throw AnnotationFormatError("bbox must be [x, y, w, h]");
            }
            auto& rec = file.images[it->second];
            rec.boxes.push_back(
                {bbox[0].get<float>(), bbox[1].get<float>(), bbox[2].get<float>(), bbox[3].get<float>()});
            rec.classes.push_back(ann.at("category_id").get<int>());
        }
        for (const auto& c : doc.at("categories")) {
            file.categories.push_back({c.at("id").get<int>(), c.at("name").get<std::string>()});
        }
        file.held_out = doc.value("held_out", false);
    } catch (const json::exception& e) {
        throw AnnotationFormatError(std::string("invalid annotation JSON: ") + e.what());
    }
    for (const auto& rec : file.images) {
        validate_boxes(rec.boxes, rec.width, rec.height, "image " + std::to_string(rec.id));
    }
    return file;
}

void save_annotations(const AnnotationFile& file, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw AnnotationError("cannot write " + path.string());
    }
    out << dump_annotations(file) << '\n';
}

AnnotationFile load_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw AnnotationError("cannot open " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_annotations(buf.str());
}

AnnotatedSample::AnnotatedSample(std::string id, HyperCube cube, std::vector<Box> boxes, std::vector<int> classes,
                                 bool held_out)
    : id_(std::move(id)),
      cube_(std::move(cube)),
      boxes_(std::move(boxes)),
      classes_(std::move(classes)),
      held_out_(held_out) {
    if (boxes_.size() != classes_.size()) {
        throw AnnotationFormatError("sample " + id_ + ": " + std::to_string(boxes_.size()) + " boxes but " +
                                    std::to_string(classes_.size()) + " class indices");
    }
    validate_boxes(boxes_, cube_.width, cube_.height, "sample " + id_);
}

const std::vector<Box>& AnnotatedSample::boxes() const {
    if (held_out_) {
        check_held_out_access(id_);
    }
    return boxes_;
}

const std::vector<int>& AnnotatedSample::classes() const {
    if (held_out_) {
        check_held_out_access(id_);
    }
    return classes_;
}

std::vector<AnnotatedSample> load_dataset(const std::filesystem::path& dir) {
    const auto file = load_annotations(dir / "annotations.json");
    std::vector<AnnotatedSample> samples;
    samples.reserve(file.images.size());
    for (const auto& rec : file.images) {
        HyperCube cube = read_cube(dir / rec.file);
        if (cube.width != rec.width || cube.height != rec.height || cube.bands != rec.bands) {
            throw AnnotationFormatError("image " + std::to_string(rec.id) + ": cube " + rec.file +
                                        " disagrees with annotation header");
        }
        samples.emplace_back(std::to_string(rec.id), std::move(cube), rec.boxes, rec.classes, file.held_out);
    }
    return samples;
}

void save_dataset(const std::vector<AnnotatedSample>& samples, const std::vector<Category>& categories,
                  const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "cubes");
    AnnotationFile file;
    file.categories = categories;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        file.held_out = file.held_out || s.held_out();
        char name[32];
        std::snprintf(name, sizeof name, "cubes/%05zu.hsic", i);
        write_cube(s.cube(), dir / name);
        ImageLabels rec;
        rec.id = static_cast<int>(i);
        rec.file = name;
        rec.width = s.cube().width;
        rec.height = s.cube().height;
        rec.bands = s.cube().bands;
        rec.boxes = s.boxes();
        rec.classes = s.classes();
        file.images.push_back(std::move(rec));
    }
    save_annotations(file, dir / "annotations.json");
}

}  // namespace sfa::hsi
