// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qnas/quantize.hpp"
#include "qnas/search_space.hpp"
#include "qnas/supernet.hpp"
#include "qnas/tensor.hpp"

namespace qnas {

// A merged, quantized subnet reconstructed from an exported artifact.
// Weights are the exact dequantized grid values; integer codes are kept so
// callers can verify grid membership without reopening the file.
struct ExportedSubnet {
    SubnetConfig cfg;
    int embed_dim = 0;
    int patch = 0;
    int heads = 0;
    int in_channels = 0;
    int num_classes = 0;
    std::map<std::string, Tensor> weights;               // per quantized layer, sliced
    std::map<std::string, int> weight_bits;              // 32 marks a raw full-precision layer
    std::map<std::string, std::vector<std::int32_t>> codes;
    std::map<std::string, QuantizerParams> act_q;        // only layers with quantized inputs
    std::map<std::string, Tensor> extras;                // pos grid, layernorm affines, head
};

// Writes one subnet folded for inference: per quantized layer the integer
// codes with scale, zero-point and bit-width (raw reals flagged bits=32 for
// FULL layers), the activation quantizers, and the structural tensors the
// forward pass needs. Same container framing as checkpoints: magic, u64
// manifest length, JSON manifest, little-endian payload.
void export_subnet(const ElasticViT& model, const SubnetConfig& cfg, const std::string& path);

ExportedSubnet load_exported(const std::string& path);

// Pure-kernel forward of the reconstructed subnet over one [res x res x c]
// image; returns [res*res x classes] logits matching the supernet's
// quantized forward within accumulation error.
Tensor exported_forward(const ExportedSubnet& sub, const Tensor& image);

} // namespace qnas
