#include "sfa/hsi/cube.hpp"

#include <cmath>
#include <string>

#include "sfa/hsi/le_bytes.hpp"

namespace sfa::hsi {

HyperCube HyperCube::zeros(std::uint32_t width, std::uint32_t height, std::uint32_t bands,
                           float spectral_resolution) {
    HyperCube cube;
    cube.width = width;
    cube.height = height;
    cube.bands = bands;
    cube.spectral_resolution = spectral_resolution;
    cube.values.assign(static_cast<std::size_t>(width) * height * bands, 0.0f);
    return cube;
}

void HyperCube::validate() const {
    if (width == 0 || height == 0 || bands == 0) {
        throw CubeValueError("cube extents must be positive, got " + std::to_string(width) + "x" +
                             std::to_string(height) + "x" + std::to_string(bands));
    }
    if (values.size() != plane_size() * bands) {
        throw CubeValueError("cube holds " + std::to_string(values.size()) + " values, expected " +
                             std::to_string(plane_size() * bands));
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw CubeValueError("non-finite value at flat index " + std::to_string(i));
        }
    }
    if (!std::isfinite(spectral_resolution)) {
        throw CubeValueError("non-finite spectral resolution");
    }
}

std::vector<std::uint8_t> encode_cube(const HyperCube& cube) {
    cube.validate();
    std::vector<std::uint8_t> out;
    out.reserve(kCubeHeaderBytes + cube.values.size() * 4);
    le::put_bytes(out, kCubeMagic, 4);
    le::put_u16(out, kCubeVersion);
    le::put_u32(out, cube.width);
    le::put_u32(out, cube.height);
    le::put_u32(out, cube.bands);
    le::put_f32(out, cube.spectral_resolution);
    for (float v : cube.values) {
        le::put_f32(out, v);
    }
    return out;
}

HyperCube decode_cube(std::span<const std::uint8_t> bytes) {
    le::Reader<CubeTruncatedError> in(bytes);
    const auto magic = in.take(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), kCubeMagic)) {
        throw CubeFormatError("bad magic: not an HSIC cube file");
    }
    const auto version = in.u16("version");
    if (version != kCubeVersion) {
        throw CubeFormatError("unsupported cube format version " + std::to_string(version));
    }
    HyperCube cube;
    cube.width = in.u32("width");
    cube.height = in.u32("height");
    cube.bands = in.u32("bands");
    cube.spectral_resolution = in.f32("spectral resolution");
    if (cube.width == 0 || cube.height == 0 || cube.bands == 0) {
        throw CubeValueError("cube header declares an empty extent");
    }
    const std::size_t count = cube.plane_size() * cube.bands;
    if (in.remaining() < count * 4) {
        throw CubeTruncatedError("payload holds " + std::to_string(in.remaining()) + " bytes, expected " +
                                 std::to_string(count * 4));
    }
    cube.values.resize(count);
    for (auto& v : cube.values) {
        v = in.f32("payload");
    }
    cube.validate();
    return cube;
}

void write_cube(const HyperCube& cube, const std::filesystem::path& path) {
    const auto bytes = encode_cube(cube);
    le::write_file_atomic(path.string(), bytes);
}

HyperCube read_cube(const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = le::read_file(path.string());
    } catch (const std::runtime_error& e) {
        throw CubeError(e.what());
    }
    return decode_cube(bytes);
}

}  // namespace sfa::hsi
