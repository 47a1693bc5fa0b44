#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sfa/autodiff/tensor.hpp"

namespace sfa {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr char kWeightsMagic[4] = {'S', 'F', 'A', 'W'};
inline constexpr std::uint16_t kWeightsVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, ad::Tensor>>;

std::vector<std::uint8_t> encode_weights(const NamedTensors& tensors);
NamedTensors decode_weights(std::span<const std::uint8_t> bytes);

void save_weights(const NamedTensors& tensors, const std::filesystem::path& path);
NamedTensors load_weights(const std::filesystem::path& path);

// Copies values into existing tensors by name; every destination must be present with a matching shape.
void assign_weights(const NamedTensors& from, const NamedTensors& into);

}  // namespace sfa
