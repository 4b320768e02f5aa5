// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qnas/graph.hpp"
#include "qnas/quantize.hpp"
#include "qnas/search_space.hpp"
#include "qnas/tensor.hpp"

namespace qnas {

// Low-rank adapters attached to frozen linear weights. A bank holds one or
// more rank-r modules per layer and a policy that decides which of them run
// for a given bit assignment:
//   regular    one module shared by every bit-width
//   selective  exactly one module, switched by the layer's bit-width
//   multiplex  a base module that always runs plus one per low-bit group
enum class LoraMode { regular, selective, multiplex };

// Which half of a layer's (w, a) bit pair selects the adapter group.
enum class SwitchKey { weight_bits, activation_bits };

LoraMode parse_lora_mode(const std::string& name);
std::string lora_mode_name(LoraMode mode);
SwitchKey parse_switch_key(const std::string& name);
std::string switch_key_name(SwitchKey key);

// One adapter pair for a weight of shape [d x k]. A carries the Gaussian
// init, B starts at zero, so a fresh module contributes exactly nothing.
struct LoRAModule {
    Tensor A; // [r x k]
    Tensor B; // [d x r]
    int rank = 0;
    float scaling = 1.0f;
};

struct MultiplexBank {
    LoraMode mode = LoraMode::regular;
    std::vector<std::vector<int>> bit_groups; // one group per module
    std::vector<LoRAModule> modules;
    int base_index = -1; // multiplex: group containing kFullBits
    bool detach = false; // multiplex: freeze base on non-base bits
    SwitchKey switch_key = SwitchKey::weight_bits;
};

// Builds a bank for a [d x k] weight. bit_groups must partition
// {2, 3, 4, 8, kFullBits}; regular mode ignores them and uses one group.
// Each module's A is seeded independently (std 0.02), B is zero.
MultiplexBank lora_init(int d, int k, int r, float s, LoraMode mode,
                        const std::vector<std::vector<int>>& bit_groups,
                        std::uint64_t seed);

// The bit value the bank switches on, per its switch_key.
int switch_bits(const MultiplexBank& bank, const BitPair& bits);

// Module index whose group contains `bits`; throws if no group does.
int group_of(const MultiplexBank& bank, int bits);

// Modules participating in the forward pass, base first in multiplex mode.
std::vector<int> active_modules(const MultiplexBank& bank, const BitPair& bits);

// Subset of active_modules that receives gradient. Differs only in multiplex
// mode with detach on, where the base is excluded on non-base bits.
std::vector<int> trainable_modules(const MultiplexBank& bank, const BitPair& bits);

// Sum of s * B * A over the active modules; shape [d x k].
Tensor lora_delta(const MultiplexBank& bank, const BitPair& bits);

// W_tilde = fake_quantize(W0 + BA, q) - BA with BA = lora_delta. Pure tensor
// math with no gradient tracking; the adapters learn only through the
// explicit low-rank branch of qalora_forward. At kFullBits returns W0.
Tensor pre_quantization(const Tensor& w0, const MultiplexBank& bank,
                        const BitPair& bits, const QuantizerParams& q);

// Inference-time weight: fake_quantize(W0 + BA, q), exactly on the quantizer
// grid; at kFullBits simply W0 + BA.
Tensor merge(const Tensor& w0, const MultiplexBank& bank, const BitPair& bits,
             const QuantizerParams& q);

// Graph handles for one module's trainable pair.
struct LoraModuleVars {
    Var a;
    Var b;
};

// y = x @ W_tilde^T + sum over active modules of s * (x @ A^T) @ B^T.
// Algebraically y = x @ fake_quantize(W0 + BA)^T, so merged inference
// reproduces this output. `vars` must hold an entry for every trainable
// module; non-trainable active modules (detached base) are folded in as
// constants, matching a no-grad branch.
Var qalora_forward(Graph& g, Var x, const Tensor& w0, const MultiplexBank& bank,
                   const std::map<int, LoraModuleVars>& vars, const BitPair& bits,
                   const QuantizerParams& q);

} // namespace qnas
