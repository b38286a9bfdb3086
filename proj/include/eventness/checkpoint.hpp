#pragma once

#include <string>
#include <utility>
#include <vector>

#include "eventness/autodiff.hpp"

namespace eventness::ad {

struct Checkpoint {
    std::string config_json;
    // Parameter order is preserved so a re-save is byte-identical.
    std::vector<std::pair<std::string, Tensor>> params;
};

// Versioned binary container: magic "EVCK", u32 version, config blob, then
// identifier -> shape + little-endian doubles per parameter. Round-trips
// bit-exactly. Writes go through a temp file and rename.
void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<const Parameter*>& params);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace eventness::ad
