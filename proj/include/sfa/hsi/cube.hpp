#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace sfa::hsi {

class CubeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class CubeFormatError : public CubeError {
public:
    using CubeError::CubeError;
};
class CubeTruncatedError : public CubeError {
public:
    using CubeError::CubeError;
};
class CubeValueError : public CubeError {
public:
    using CubeError::CubeError;
};

// W x H x L hyperspectral image stored band-sequential: values[(band * H + row) * W + col].
struct HyperCube {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t bands = 0;
    float spectral_resolution = 0.0f;  // nanometers, metadata only
    std::vector<float> values;

    static HyperCube zeros(std::uint32_t width, std::uint32_t height, std::uint32_t bands,
                           float spectral_resolution = 0.0f);

    std::size_t plane_size() const { return static_cast<std::size_t>(width) * height; }
    float at(std::uint32_t band, std::uint32_t row, std::uint32_t col) const {
        return values[(static_cast<std::size_t>(band) * height + row) * width + col];
    }
    float& at(std::uint32_t band, std::uint32_t row, std::uint32_t col) {
        return values[(static_cast<std::size_t>(band) * height + row) * width + col];
    }
    std::span<const float> band(std::uint32_t b) const {
        return std::span<const float>(values).subspan(b * plane_size(), plane_size());
    }

    // Throws CubeValueError on zero extents, size mismatch or non-finite values.
    void validate() const;

    friend bool operator==(const HyperCube&, const HyperCube&) = default;
};

inline constexpr char kCubeMagic[4] = {'H', 'S', 'I', 'C'};
inline constexpr std::uint16_t kCubeVersion = 1;
inline constexpr std::size_t kCubeHeaderBytes = 4 + 2 + 4 * 3 + 4;

std::vector<std::uint8_t> encode_cube(const HyperCube& cube);
HyperCube decode_cube(std::span<const std::uint8_t> bytes);

void write_cube(const HyperCube& cube, const std::filesystem::path& path);
HyperCube read_cube(const std::filesystem::path& path);

}  // namespace sfa::hsi
