// SPDX-License-Identifier: Apache-2.0
#include "qnas/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace qnas {

Tensor AdamW::step(const std::string& name, const Tensor& value, const Tensor& grad) {
    if (!value.same_shape(grad)) {
        throw std::invalid_argument("optimizer step: gradient shape does not match parameter " + name);
    }
    Slot& slot = state_[name];
    if (slot.steps == 0) {
        slot.m = Tensor::zeros(value.shape());
        slot.v = Tensor::zeros(value.shape());
    } else if (!slot.m.same_shape(value)) {
        throw std::invalid_argument("optimizer step: stored state shape does not match parameter " + name);
    }
    slot.steps += 1;

    const double b1 = cfg_.beta1;
    const double b2 = cfg_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(slot.steps));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(slot.steps));
    const bool decay = value.ndim() >= 2 && cfg_.weight_decay != 0.0f;

    Tensor out = value;
    for (std::int64_t i = 0; i < value.numel(); ++i) {
        const double g = grad[i];
        const double m = b1 * slot.m[i] + (1.0 - b1) * g;
        const double v = b2 * slot.v[i] + (1.0 - b2) * g * g;
        slot.m[i] = static_cast<float>(m);
        slot.v[i] = static_cast<float>(v);
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        double update = cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        if (decay) {
            update += cfg_.lr * cfg_.weight_decay * static_cast<double>(value[i]);
        }
        out[i] = static_cast<float>(static_cast<double>(value[i]) - update);
    }
    return out;
}

} // namespace qnas
