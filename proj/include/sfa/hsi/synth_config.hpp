#pragma once

#include <filesystem>
#include <string>

#include "sfa/hsi/synth.hpp"

namespace sfa::hsi {

// Flat key=value overrides of the scalar fields of reference_synth_config(); materials and
// background shapes come from the reference pools.
// Unknown or repeated keys and unparseable values throw SynthConfigError.
SynthConfig parse_synth_config(const std::string& text);
SynthConfig load_synth_config(const std::filesystem::path& path);

// Scalar fields only, one key per line.
std::string dump_synth_config(const SynthConfig& cfg);

}  // namespace sfa::hsi
