// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "qnas/tensor.hpp"

namespace qnas {

struct AdamWConfig {
    float lr = 1e-3f;
    float weight_decay = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

// Adaptive moment estimation with decoupled weight decay. State is keyed by
// parameter name with a per-parameter step count, so a parameter skipped in
// one step (an inactive adapter or quantizer) resumes exactly where it left
// off. Decay applies only to tensors of rank 2 or higher: vectors (layernorm
// affine) and scalars (quantizer steps and zero-points) are never decayed.
class AdamW {
public:
    struct Slot {
        Tensor m;
        Tensor v;
        std::int64_t steps = 0;
    };

    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    // One update for one parameter; returns the new value.
    Tensor step(const std::string& name, const Tensor& value, const Tensor& grad);

    const AdamWConfig& config() const { return cfg_; }
    std::map<std::string, Slot>& state() { return state_; }
    const std::map<std::string, Slot>& state() const { return state_; }

private:
    AdamWConfig cfg_;
    std::map<std::string, Slot> state_;
};

} // namespace qnas
