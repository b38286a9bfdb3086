#pragma once

#include <cstddef>
#include <vector>

#include "eventness/autodiff.hpp"
#include "eventness/rng.hpp"

namespace eventness::backbone {

struct BackboneConfig {
    std::vector<std::size_t> channels = {16, 32, 64, 64};
    std::size_t pools_per_block = 1;  // each pool halves the spatial dims
};

// Stacked conv(3x3, same pad) + bias + relu + 2x2 maxpool blocks. Total
// stride is 2^(blocks * pools_per_block); 4 blocks give the default 16.
struct Backbone {
    BackboneConfig cfg;
    std::size_t in_channels;
    std::vector<ad::Parameter> kernels;
    std::vector<ad::Parameter> biases;

    Backbone(const BackboneConfig& cfg, std::size_t in_channels, Rng& rng);

    std::vector<ad::Parameter*> parameters();
    std::size_t stride() const;
    std::size_t out_channels() const { return cfg.channels.back(); }
};

struct FeatureMap {
    ad::Var values;         // [C, H_f, W_f] on the tape
    std::size_t stride = 0;
};

// input [C_in, H, W] with H, W >= stride; output dims floor(H/S), floor(W/S).
FeatureMap extract_features(ad::Tape& tape, ad::Var input, Backbone& net);

}  // namespace eventness::backbone
