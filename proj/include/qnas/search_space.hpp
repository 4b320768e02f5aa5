// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qnas/rng.hpp"

namespace qnas {

// Weight/activation bit-width pair of one quantized layer.
struct BitPair {
    int w = 32;
    int a = 32;
    bool operator==(const BitPair&) const = default;
};

// The elastic dimensions plus the fixed model skeleton they hang off.
struct SearchSpace {
    std::vector<int> resolutions;
    std::vector<std::vector<int>> depth_options; // one option list per stage
    std::vector<double> mlp_ratios;
    std::vector<int> weight_bits;
    std::vector<int> act_bits;

    int embed_dim = 32;
    int patch = 8;
    int heads = 4;
    int in_channels = 1;
    int num_classes = 3;

    int stages() const { return static_cast<int>(depth_options.size()); }
    int max_depth(int stage) const;
    int max_resolution() const;
    void validate() const; // throws on structural problems
};

// One point of the search space. mlp_ratios and layer_bits are flattened over
// the active layers in stage order; dropped layers carry no entries.
struct SubnetConfig {
    int resolution = 0;
    std::vector<int> depths;
    std::vector<double> mlp_ratios;
    BitPair patch_bits;
    std::vector<BitPair> layer_bits;

    int active_layers() const;
    bool operator==(const SubnetConfig&) const = default;
};

// Uniform draw, field by field, in a pinned order (resolution, depths,
// ratios, patch bits, layer bits) so a given rng state maps to one config.
// Resolutions above res_cap are excluded; 0 means no cap.
SubnetConfig sample_uniform(const SearchSpace& space, Rng& rng, int res_cap = 0);

// nullopt when cfg is valid, otherwise a message naming the offending field.
std::optional<std::string> validate_config(const SearchSpace& space, const SubnetConfig& cfg);

// Largest config: max resolution, max depths, max ratio, all bits FULL.
SubnetConfig max_config(const SearchSpace& space);

// Compact round-trip format, e.g.
//   res=64;d=3,2;mlp=4,4,2,2,4;bits=w8a8,w4a4,w2a8,w8a32,w32a2,w3a3
// The first bits entry is the patch embedding, the rest follow the active
// layers in stage order.
std::string to_subnet_string(const SubnetConfig& cfg);
SubnetConfig parse_subnet_string(const std::string& text);

// Every config of the space, in deterministic order. Intended for tiny test
// spaces; throws once more than `limit` configs would be produced.
std::vector<SubnetConfig> enumerate_space(const SearchSpace& space, size_t limit = 1 << 20);

} // namespace qnas
