#include "sfa/detect/detections_json.hpp"

#include <cmath>
#include <map>

#include <json.hpp>

#include "sfa/hsi/le_bytes.hpp"

namespace sfa::detect {

using nlohmann::json;

std::string dump_detections(const std::vector<ImageDetections>& images) {
    json out = json::array();
    for (const auto& img : images) {
        const auto& d = img.detections;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const Box& b = d.boxes[i];
            out.push_back({{"image_id", img.image_id},
                           {"bbox", {b.x, b.y, b.w, b.h}},
                           {"score", d.scores[i]},
                           {"category_id", d.classes[i]}});
        }
    }
    return out.dump(1);
}

std::vector<ImageDetections> parse_detections(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw DetectionFormatError(std::string("invalid detection JSON: ") + e.what());
    }
    if (!doc.is_array()) throw DetectionFormatError("detection JSON must be an array of records");
    std::vector<ImageDetections> images;
    std::map<int, std::size_t> slot;
    try {
        for (const auto& rec : doc) {
            const int id = rec.at("image_id").get<int>();
            const auto& bb = rec.at("bbox");
            if (!bb.is_array() || bb.size() != 4) throw DetectionFormatError("bbox must hold 4 numbers");
            const Box b{bb[0].get<float>(), bb[1].get<float>(), bb[2].get<float>(), bb[3].get<float>()};
            const float score = rec.at("score").get<float>();
            if (!std::isfinite(score)) throw DetectionFormatError("non-finite score for image " + std::to_string(id));
            auto [it, fresh] = slot.try_emplace(id, images.size());
            if (fresh) images.push_back({id, {}});
            images[it->second].detections.push(b, score, rec.at("category_id").get<int>());
        }
    } catch (const json::exception& e) {
        throw DetectionFormatError(std::string("invalid detection record: ") + e.what());
    }
    return images;
}

void save_detections(const std::vector<ImageDetections>& images, const std::filesystem::path& path) {
    const std::string text = dump_detections(images) + "\n";
    le::write_file_atomic(path.string(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<ImageDetections> load_detections(const std::filesystem::path& path) {
    const auto bytes = le::read_file(path.string());
    return parse_detections(std::string(bytes.begin(), bytes.end()));
}

}  // namespace sfa::detect
