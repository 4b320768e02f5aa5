// SPDX-License-Identifier: Apache-2.0
#include "qnas/lora.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "qnas/kernels.hpp"
#include "qnas/rng.hpp"

namespace qnas {

namespace {

const std::vector<int> kCandidateBits = {2, 3, 4, 8, kFullBits};

void check_partition(const std::vector<std::vector<int>>& groups) {
    std::vector<int> seen;
    for (const auto& group : groups) {
        if (group.empty()) throw std::invalid_argument("lora bit group is empty");
        for (int b : group) {
            if (!is_valid_bits(b))
                throw std::invalid_argument("lora bit group holds invalid bit-width " + std::to_string(b));
            if (std::find(seen.begin(), seen.end(), b) != seen.end())
                throw std::invalid_argument("lora bit groups overlap on " + std::to_string(b));
            seen.push_back(b);
        }
    }
    for (int b : kCandidateBits) {
        if (std::find(seen.begin(), seen.end(), b) == seen.end())
            throw std::invalid_argument("lora bit groups do not cover " + std::to_string(b));
    }
}

bool contains(const std::vector<int>& v, int x) {
    return std::find(v.begin(), v.end(), x) != v.end();
}

} // namespace

LoraMode parse_lora_mode(const std::string& name) {
    if (name == "regular") return LoraMode::regular;
    if (name == "selective") return LoraMode::selective;
    if (name == "multiplex") return LoraMode::multiplex;
    throw std::invalid_argument("unknown lora mode: " + name);
}

std::string lora_mode_name(LoraMode mode) {
    switch (mode) {
        case LoraMode::regular: return "regular";
        case LoraMode::selective: return "selective";
        case LoraMode::multiplex: return "multiplex";
    }
    throw std::logic_error("unreachable lora mode");
}

SwitchKey parse_switch_key(const std::string& name) {
    if (name == "weight_bits") return SwitchKey::weight_bits;
    if (name == "activation_bits") return SwitchKey::activation_bits;
    throw std::invalid_argument("unknown switch key: " + name);
}

std::string switch_key_name(SwitchKey key) {
    return key == SwitchKey::weight_bits ? "weight_bits" : "activation_bits";
}

MultiplexBank lora_init(int d, int k, int r, float s, LoraMode mode,
                        const std::vector<std::vector<int>>& bit_groups,
                        std::uint64_t seed) {
    if (d <= 0 || k <= 0 || r <= 0) throw std::invalid_argument("lora dimensions must be positive");
    if (s <= 0.0f) throw std::invalid_argument("lora scaling must be positive");

    MultiplexBank bank;
    bank.mode = mode;
    if (mode == LoraMode::regular) {
        bank.bit_groups = {kCandidateBits};
    } else {
        check_partition(bit_groups);
        bank.bit_groups = bit_groups;
    }
    if (mode == LoraMode::multiplex) {
        for (size_t g = 0; g < bank.bit_groups.size(); ++g) {
            if (contains(bank.bit_groups[g], kFullBits)) bank.base_index = static_cast<int>(g);
        }
    }

    for (size_t g = 0; g < bank.bit_groups.size(); ++g) {
        LoRAModule m;
        m.rank = r;
        m.scaling = s;
        m.A = Tensor({r, k});
        m.B = Tensor::zeros({d, r});
        Rng rng(Rng::derive_seed(seed, "lora.m" + std::to_string(g)));
        for (float& v : m.A.vec()) v = rng.normal(0.0f, 0.02f);
        bank.modules.push_back(std::move(m));
    }
    return bank;
}

int switch_bits(const MultiplexBank& bank, const BitPair& bits) {
    return bank.switch_key == SwitchKey::weight_bits ? bits.w : bits.a;
}

int group_of(const MultiplexBank& bank, int bits) {
    for (size_t g = 0; g < bank.bit_groups.size(); ++g) {
        if (contains(bank.bit_groups[g], bits)) return static_cast<int>(g);
    }
    throw std::invalid_argument("no lora bit group contains " + std::to_string(bits));
}

std::vector<int> active_modules(const MultiplexBank& bank, const BitPair& bits) {
    const int g = group_of(bank, switch_bits(bank, bits));
    if (bank.mode == LoraMode::multiplex && g != bank.base_index) return {bank.base_index, g};
    return {g};
}

std::vector<int> trainable_modules(const MultiplexBank& bank, const BitPair& bits) {
    std::vector<int> out = active_modules(bank, bits);
    if (bank.mode == LoraMode::multiplex && bank.detach) {
        const int g = group_of(bank, switch_bits(bank, bits));
        if (g != bank.base_index)
            out.erase(std::remove(out.begin(), out.end(), bank.base_index), out.end());
    }
    return out;
}

Tensor lora_delta(const MultiplexBank& bank, const BitPair& bits) {
    const std::vector<int> active = active_modules(bank, bits);
    const LoRAModule& first = bank.modules[active[0]];
    Tensor delta = Tensor::zeros({first.B.dim(0), first.A.dim(1)});
    for (int idx : active) {
        const LoRAModule& m = bank.modules[idx];
        delta = k_add(delta, k_scale(k_matmul(m.B, m.A), m.scaling));
    }
    return delta;
}

Tensor pre_quantization(const Tensor& w0, const MultiplexBank& bank,
                        const BitPair& bits, const QuantizerParams& q) {
    if (q.bits != bits.w)
        throw std::invalid_argument("quantizer bits do not match the layer's weight bits");
    if (q.bits == kFullBits) return w0;
    if (q.kind != QuantKind::weight)
        throw std::invalid_argument("pre_quantization needs a weight-kind quantizer");
    const Tensor delta = lora_delta(bank, bits);
    if (delta.shape() != w0.shape()) {
        std::ostringstream msg;
        msg << "lora delta shape " << shape_str(delta.shape())
            << " does not match weight shape " << shape_str(w0.shape());
        throw std::invalid_argument(msg.str());
    }
    const Tensor fused = fake_quantize(k_add(w0, delta), q);
    return k_add(fused, k_scale(delta, -1.0f));
}

Tensor merge(const Tensor& w0, const MultiplexBank& bank, const BitPair& bits,
             const QuantizerParams& q) {
    const Tensor fused = k_add(w0, lora_delta(bank, bits));
    if (q.bits == kFullBits) return fused;
    return fake_quantize(fused, q);
}

Var qalora_forward(Graph& g, Var x, const Tensor& w0, const MultiplexBank& bank,
                   const std::map<int, LoraModuleVars>& vars, const BitPair& bits,
                   const QuantizerParams& q) {
    Var y = g.linear(x, g.constant(pre_quantization(w0, bank, bits, q)));
    const std::vector<int> trainable = trainable_modules(bank, bits);
    for (int idx : active_modules(bank, bits)) {
        const LoRAModule& m = bank.modules[idx];
        if (contains(trainable, idx)) {
            auto it = vars.find(idx);
            if (it == vars.end())
                throw std::invalid_argument("missing graph vars for lora module " + std::to_string(idx));
            y = g.add(y, g.scale(g.linear(g.linear(x, it->second.a), it->second.b), m.scaling));
        } else {
            // Detached base branch: its value joins the output but no
            // gradient flows through it, to the adapters or to x.
            const Tensor contrib = k_scale(k_linear(k_linear(x.value(), m.A), m.B), m.scaling);
            y = g.add(y, g.constant(contrib));
        }
    }
    return y;
}

} // namespace qnas
