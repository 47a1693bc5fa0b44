#include "sfa/ssam/checkpoint.hpp"

#include <algorithm>
#include <map>

#include "sfa/hsi/le_bytes.hpp"

namespace sfa {

std::vector<std::uint8_t> encode_weights(const NamedTensors& tensors) {
    std::vector<std::uint8_t> out;
    le::put_bytes(out, kWeightsMagic, 4);
    le::put_u16(out, kWeightsVersion);
    le::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff || t.rank() > 0xff) {
            throw CheckpointError("tensor '" + name + "' cannot be represented in the weights format");
        }
        le::put_u16(out, static_cast<std::uint16_t>(name.size()));
        le::put_bytes(out, name.data(), name.size());
        le::put_u8(out, static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) {
            le::put_u32(out, static_cast<std::uint32_t>(d));
        }
        for (float v : t.data()) {
            le::put_f32(out, v);
        }
    }
    return out;
}

NamedTensors decode_weights(std::span<const std::uint8_t> bytes) {
    le::Reader<CheckpointError> in(bytes);
    const auto magic = in.take(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), kWeightsMagic)) {
        throw CheckpointError("bad magic: not an SFAW weights file");
    }
    const std::uint16_t version = in.u16("version");
    if (version != kWeightsVersion) {
        throw CheckpointError("unsupported weights version " + std::to_string(version));
    }
    const std::uint32_t count = in.u32("tensor count");
    NamedTensors out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t len = in.u16("name length");
        const auto name_bytes = in.take(len, "name");
        std::string name(name_bytes.begin(), name_bytes.end());
        const std::uint8_t rank = in.u8("rank");
        ad::Shape shape(rank);
        for (auto& d : shape) {
            d = in.u32("dimension");
        }
        std::vector<float> data(ad::numel_of(shape));
        for (auto& v : data) {
            v = in.f32("payload");
        }
        out.emplace_back(std::move(name), ad::Tensor(std::move(shape), std::move(data)));
    }
    if (in.remaining() != 0) {
        throw CheckpointError(std::to_string(in.remaining()) + " trailing bytes after last tensor");
    }
    return out;
}

void save_weights(const NamedTensors& tensors, const std::filesystem::path& path) {
    le::write_file_atomic(path.string(), encode_weights(tensors));
}

NamedTensors load_weights(const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = le::read_file(path.string());
    } catch (const std::exception& e) {
        throw CheckpointError(e.what());
    }
    return decode_weights(bytes);
}

void assign_weights(const NamedTensors& from, const NamedTensors& into) {
    std::map<std::string, const ad::Tensor*> by_name;
    for (const auto& [name, t] : from) {
        by_name[name] = &t;
    }
    for (const auto& [name, dst] : into) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw CheckpointError("checkpoint has no tensor named '" + name + "'");
        }
        const ad::Tensor& src = *it->second;
        if (src.shape() != dst.shape()) {
            throw CheckpointError("tensor '" + name + "' has shape " + ad::shape_str(src.shape()) +
                                  " in checkpoint, model expects " + ad::shape_str(dst.shape()));
        }
        ad::Tensor handle = dst;
        auto out = handle.mutable_data();
        std::copy(src.data().begin(), src.data().end(), out.begin());
    }
}

}  // namespace sfa
