// SPDX-License-Identifier: Apache-2.0
#include "qnas/cost.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace qnas {

int64_t macs_linear(int64_t tokens, int64_t d_in, int64_t d_out) {
    if (tokens < 0 || d_in <= 0 || d_out <= 0) {
        throw std::invalid_argument("macs_linear: non-positive dimensions");
    }
    return tokens * d_in * d_out;
}

int64_t macs_attention(int64_t tokens, int64_t heads, int64_t head_dim) {
    if (tokens < 0 || heads <= 0 || head_dim <= 0) {
        throw std::invalid_argument("macs_attention: non-positive dimensions");
    }
    return 2 * heads * tokens * tokens * head_dim;
}

int64_t macs_patch_embed(int64_t tokens, int64_t patch, int64_t channels, int64_t dim) {
    if (tokens < 0 || patch <= 0 || channels <= 0 || dim <= 0) {
        throw std::invalid_argument("macs_patch_embed: non-positive dimensions");
    }
    return tokens * patch * patch * channels * dim;
}

BitOpsReport bitops(const SubnetConfig& cfg, const SearchSpace& space) {
    if (const auto err = validate_config(space, cfg)) {
        throw std::invalid_argument("bitops: invalid config: " + *err);
    }
    const int64_t side = cfg.resolution / space.patch;
    const int64_t tokens = side * side;
    const int64_t dim = space.embed_dim;
    const int64_t head_dim = dim / space.heads;

    BitOpsReport report;
    const auto push = [&report](std::string layer, int64_t macs, int w_bits, int a_bits, bool head) {
        BitOpsRecord rec;
        rec.layer = std::move(layer);
        rec.macs = macs;
        rec.w_bits = w_bits;
        rec.a_bits = a_bits;
        rec.bitops = macs * static_cast<int64_t>(w_bits) * static_cast<int64_t>(a_bits);
        (head ? report.head_total : report.backbone_total) += rec.bitops;
        report.records.push_back(std::move(rec));
    };

    push("patch", macs_patch_embed(tokens, space.patch, space.in_channels, dim),
         cfg.patch_bits.w, cfg.patch_bits.a, false);

    int layer = 0;
    for (int s = 0; s < space.stages(); ++s) {
        for (int b = 0; b < cfg.depths[static_cast<size_t>(s)]; ++b, ++layer) {
            const BitPair bits = cfg.layer_bits[static_cast<size_t>(layer)];
            const int64_t hidden =
                static_cast<int64_t>(std::ceil(cfg.mlp_ratios[static_cast<size_t>(layer)] * static_cast<double>(dim)));
            const std::string prefix = "s" + std::to_string(s) + ".b" + std::to_string(b) + ".";
            push(prefix + "attn.q", macs_linear(tokens, dim, dim), bits.w, bits.a, false);
            push(prefix + "attn.k", macs_linear(tokens, dim, dim), bits.w, bits.a, false);
            push(prefix + "attn.v", macs_linear(tokens, dim, dim), bits.w, bits.a, false);
            // Both operands of the score/value products are activations.
            push(prefix + "attn.sv", macs_attention(tokens, space.heads, head_dim), bits.a, bits.a, false);
            push(prefix + "attn.o", macs_linear(tokens, dim, dim), bits.w, bits.a, false);
            push(prefix + "fc1", macs_linear(tokens, dim, hidden), bits.w, bits.a, false);
            push(prefix + "fc2", macs_linear(tokens, hidden, dim), bits.w, bits.a, false);
        }
    }

    push("head", macs_linear(tokens, dim, space.num_classes), 8, 8, true);
    report.grand_total = report.backbone_total + report.head_total;
    return report;
}

int64_t max_bitops(const SearchSpace& space) {
    return bitops(max_config(space), space).grand_total;
}

std::string bitops_csv(const BitOpsReport& report) {
    std::ostringstream out;
    out << "layer,macs,w_bits,a_bits,bitops\n";
    for (const BitOpsRecord& rec : report.records) {
        out << rec.layer << ',' << rec.macs << ',' << rec.w_bits << ',' << rec.a_bits << ',' << rec.bitops << '\n';
    }
    out << "backbone_total,,,," << report.backbone_total << '\n';
    out << "head_total,,,," << report.head_total << '\n';
    out << "grand_total,,,," << report.grand_total << '\n';
    return out.str();
}

} // namespace qnas
