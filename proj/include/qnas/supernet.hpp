// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qnas/graph.hpp"
#include "qnas/lora.hpp"
#include "qnas/quantize.hpp"
#include "qnas/search_space.hpp"
#include "qnas/tensor.hpp"

namespace qnas {

// Per-block base weights at maximum width. MLP elasticity slices the leading
// ceil(ratio * dim) rows of fc1 and columns of fc2.
struct BlockWeights {
    Tensor ln1_g, ln1_b; // [dim]
    Tensor q, k, v, o;   // [dim x dim]
    Tensor ln2_g, ln2_b; // [dim]
    Tensor fc1;          // [hidden_max x dim]
    Tensor fc2;          // [dim x hidden_max]
};

// Hyper-parameters applied when adapters are attached at the phase boundary.
struct LoraSettings {
    int rank = 4;
    float scaling = 2.0f;
    LoraMode mode = LoraMode::multiplex;
    std::vector<std::vector<int>> bit_groups = {{2}, {3}, {4}, {8}, {kFullBits}};
    bool detach = true;
    SwitchKey switch_key = SwitchKey::weight_bits;
};

// Weight-sharing elastic ViT. One set of maximum-size base weights serves
// every subnet; a config picks resolution, per-stage depth, per-layer MLP
// ratio and per-block bit pairs. Quantizer entries are created lazily per
// (layer, kind, bits) and persist in `quantizers`.
class ElasticViT {
public:
    ElasticViT(const SearchSpace& space, std::uint64_t seed);

    SearchSpace space;
    Tensor patch_w; // [dim x patch*patch*channels]
    Tensor pos;     // [grid x grid x dim] at maximum resolution
    std::vector<std::vector<BlockWeights>> blocks; // [stage][block]
    Tensor head_w;  // [classes x dim]
    QuantizerBank quantizers;
    std::map<std::string, MultiplexBank> lora; // keyed by attach-point layer
    bool base_frozen = false;
    bool lora_attached = false;

    int hidden_max() const;
    int head_dim() const { return space.embed_dim / space.heads; }

    // Layer names in forward order: "patch", then per active block
    // "s{i}.b{j}.attn.{q,k,v,o}", ".fc1", ".fc2". With no config argument,
    // enumerates at maximum depth.
    std::vector<std::string> quantized_layers() const;
    static bool is_attach_point(const std::string& layer);

    void freeze_base() { base_frozen = true; }
    void attach_lora(const LoraSettings& settings, std::uint64_t seed);

    // Named parameter access used by the optimizer and checkpoints. Names:
    // "base.*" tensors, "q.<layer>.<w|a><bits>.<scale|zero>" scalars as 1x1,
    // "lora.<layer>.m<g>.<a|b>" adapter factors.
    Tensor get_param(const std::string& name) const;
    void set_param(const std::string& name, const Tensor& value);
    std::vector<std::string> base_param_names() const;
    std::vector<std::string> all_param_names() const;
};

// Positional grid for a resolution: bilinear resize of the stored
// max-resolution grid to (resolution/patch) per side.
Tensor interpolate_pos_embed(const ElasticViT& model, int resolution);

struct ForwardOutput {
    std::vector<Var> logits;             // per image, [res*res x classes]
    std::map<std::string, Var> params;   // trainable leaves used in this pass
};

// Builds the forward graph for `cfg` over a batch of [res x res x channels]
// images. Activations are fake-quantized at the input of every quantized
// linear; weights per the phase: plain STE quantization while the base
// trains, detached QA-LoRA weights once adapters are attached.
ForwardOutput configure_and_forward(ElasticViT& model, Graph& g,
                                    const SubnetConfig& cfg,
                                    const std::vector<Tensor>& images);

// Runs one maximum-size forward per quantized bit option so every
// (layer, kind, bits) quantizer entry exists. Evaluation afterwards never
// creates entries, making results independent of evaluation order.
void ensure_calibrated(ElasticViT& model, const Tensor& image);

// One quantized linear of a concrete subnet, folded for inference: the
// sliced base weight with any active adapters merged in, fake-quantized on
// the layer's weight grid (raw reals at kFullBits).
struct MergedLayer {
    std::string name;
    Tensor weight;       // dequantized merged weight, sliced to the config
    int w_bits = kFullBits;
    int a_bits = kFullBits;
    QuantizerParams wq;  // grid the weight lies on; default at kFullBits
    QuantizerParams aq;  // input activation quantizer; default at kFullBits
};

// Folds every quantized linear of `cfg` in forward order. Throws if a needed
// quantizer entry is missing; run ensure_calibrated (or train) first.
std::vector<MergedLayer> merged_layers(const ElasticViT& model, const SubnetConfig& cfg);

} // namespace qnas
