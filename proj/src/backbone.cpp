#include "eventness/backbone.hpp"

#include <stdexcept>
#include <string>

#include "eventness/errors.hpp"

namespace eventness::backbone {

Backbone::Backbone(const BackboneConfig& config, std::size_t in_c, Rng& rng)
    : cfg(config), in_channels(in_c) {
    if (cfg.channels.empty()) throw std::invalid_argument("backbone needs at least one block");
    if (cfg.pools_per_block < 1) throw std::invalid_argument("backbone needs at least one pool per block");
    std::size_t prev = in_c;
    for (std::size_t b = 0; b < cfg.channels.size(); ++b) {
        const std::size_t c = cfg.channels[b];
        const std::string tag = "backbone.block" + std::to_string(b);
        kernels.emplace_back(tag + ".kernel", ad::Tensor({c, prev, 3, 3}));
        biases.emplace_back(tag + ".bias", ad::Tensor({c}));
        ad::init_he_uniform(kernels.back().tensor, prev * 9, rng);
        prev = c;
    }
}

std::vector<ad::Parameter*> Backbone::parameters() {
    std::vector<ad::Parameter*> out;
    for (std::size_t b = 0; b < kernels.size(); ++b) {
        out.push_back(&kernels[b]);
        out.push_back(&biases[b]);
    }
    return out;
}

std::size_t Backbone::stride() const {
    return std::size_t{1} << (cfg.channels.size() * cfg.pools_per_block);
}

FeatureMap extract_features(ad::Tape& tape, ad::Var input, Backbone& net) {
    const ad::Tensor& x = tape.value(input);
    if (x.rank() != 3 || x.dim(0) != net.in_channels) {
        throw std::invalid_argument("extract_features: input must be [C_in,H,W]");
    }
    const std::size_t s = net.stride();
    if (x.dim(1) < s || x.dim(2) < s) throw DataError("input too small");

    ad::Var h = input;
    for (std::size_t b = 0; b < net.kernels.size(); ++b) {
        h = tape.relu(tape.bias_add(tape.conv2d(h, tape.param(net.kernels[b]), 1, 1),
                                    tape.param(net.biases[b])));
        for (std::size_t p = 0; p < net.cfg.pools_per_block; ++p) h = tape.maxpool2d(h, 2, 2);
    }
    return FeatureMap{h, s};
}

}  // namespace eventness::backbone
