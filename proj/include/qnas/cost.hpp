// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qnas/search_space.hpp"

namespace qnas {

// One multiply-accumulate block of the forward pass. For the attention
// score/value products both operands are activations, so w_bits carries the
// activation bit-width as well.
struct BitOpsRecord {
    std::string layer;
    int64_t macs = 0;
    int w_bits = 0;
    int a_bits = 0;
    int64_t bitops = 0;
};

struct BitOpsReport {
    std::vector<BitOpsRecord> records;
    int64_t backbone_total = 0;
    int64_t head_total = 0;
    int64_t grand_total = 0;
};

int64_t macs_linear(int64_t tokens, int64_t d_in, int64_t d_out);
// Score and value products together: 2 * heads * tokens^2 * head_dim.
int64_t macs_attention(int64_t tokens, int64_t heads, int64_t head_dim);
int64_t macs_patch_embed(int64_t tokens, int64_t patch, int64_t channels, int64_t dim);

// Per-layer BitOPs = MACs * w_bits * a_bits with FULL counted as 32 bits.
// Dropped layers contribute nothing; the head is counted at 8x8. Throws on a
// config that fails validate_config.
BitOpsReport bitops(const SubnetConfig& cfg, const SearchSpace& space);

// Grand total of the largest config; search budgets are quoted against it.
int64_t max_bitops(const SearchSpace& space);

// Header line plus one row per record and the three totals.
std::string bitops_csv(const BitOpsReport& report);

} // namespace qnas
