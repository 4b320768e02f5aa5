// SPDX-License-Identifier: Apache-2.0
#include "qnas/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qnas {

bool is_quantized_bits(int bits) { return bits == 2 || bits == 3 || bits == 4 || bits == 8; }
bool is_valid_bits(int bits) { return is_quantized_bits(bits) || bits == kFullBits; }

namespace {

void validate(const QuantizerParams& q) {
    if (!is_valid_bits(q.bits)) {
        throw std::invalid_argument("quantizer: unsupported bit-width " + std::to_string(q.bits));
    }
    if (q.bits != kFullBits && !(q.scale > 0.0f)) {
        throw std::invalid_argument("quantizer: scale must be positive, got " + std::to_string(q.scale));
    }
}

} // namespace

QuantizerParams init_quantizer(float x_min, float x_max, int bits, QuantKind kind) {
    if (!is_quantized_bits(bits)) {
        throw std::invalid_argument("init_quantizer: unsupported bit-width " + std::to_string(bits));
    }
    if (!(x_max > x_min)) {
        throw std::range_error("init_quantizer: degenerate range [" + std::to_string(x_min) + ", " +
                               std::to_string(x_max) + "]");
    }
    QuantizerParams q;
    q.bits = bits;
    q.kind = kind;
    const double p = static_cast<double>(q.p());
    const double scale = (static_cast<double>(x_max) - static_cast<double>(x_min)) / p;
    const double z = round_half_even(-static_cast<double>(x_min) / scale);
    q.scale = static_cast<float>(scale);
    q.zero_point = static_cast<float>(std::clamp(z, 0.0, p));
    q.initialized = true;
    return q;
}

Tensor fake_quantize(const Tensor& x, const QuantizerParams& q) {
    validate(q);
    if (q.bits == kFullBits) return x;
    const double scale = static_cast<double>(q.scale);
    const double z = static_cast<double>(q.zero_point);
    const double n = static_cast<double>(q.n());
    const double p = static_cast<double>(q.p());
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double t = static_cast<double>(x[i]) / scale + z;
        const double xq = std::clamp(round_half_even(t), n, p);
        out[i] = static_cast<float>((xq - z) * scale);
    }
    return out;
}

FakeQuantGrads fake_quantize_backward(const Tensor& upstream, const Tensor& x, const QuantizerParams& q) {
    validate(q);
    if (!upstream.same_shape(x)) {
        throw std::invalid_argument("fake_quantize_backward: upstream shape " + shape_str(upstream.shape()) +
                                    " does not match input " + shape_str(x.shape()));
    }
    FakeQuantGrads grads;
    grads.dx = Tensor(x.shape());
    if (q.bits == kFullBits) {
        grads.dx = upstream;
        return grads;
    }
    const double scale = static_cast<double>(q.scale);
    const double z = static_cast<double>(q.zero_point);
    const double n = static_cast<double>(q.n());
    const double p = static_cast<double>(q.p());
    double dscale = 0.0, dzero = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double up = static_cast<double>(upstream[i]);
        const double t = static_cast<double>(x[i]) / scale + z;
        if (t < n) {
            dscale += up * (n - z);
            dzero += -up * scale;
        } else if (t > p) {
            dscale += up * (p - z);
            dzero += -up * scale;
        } else {
            grads.dx[i] = upstream[i];
            const double xq = round_half_even(t);
            dscale += up * (xq - z - static_cast<double>(x[i]) / scale);
        }
    }
    grads.dscale = static_cast<float>(dscale);
    grads.dzero = (q.kind == QuantKind::activation) ? static_cast<float>(dzero) : 0.0f;
    return grads;
}

Tensor minmax_quantize_static(const Tensor& x, int bits) {
    if (x.numel() == 0) throw std::invalid_argument("minmax_quantize_static: empty tensor");
    if (!is_quantized_bits(bits)) {
        throw std::invalid_argument("minmax_quantize_static: unsupported bit-width " + std::to_string(bits));
    }
    const float lo = x.min_value();
    const float hi = x.max_value();
    if (!(hi > lo)) return x; // constant tensor: nothing to quantize
    const double p = static_cast<double>((1 << bits) - 1);
    const double scale = (static_cast<double>(hi) - static_cast<double>(lo)) / p;
    const double z = std::clamp(round_half_even(-static_cast<double>(lo) / scale), 0.0, p);
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double t = static_cast<double>(x[i]) / scale + z;
        const double xq = std::clamp(round_half_even(t), 0.0, p);
        out[i] = static_cast<float>((xq - z) * scale);
    }
    return out;
}

std::vector<std::int32_t> quantize_codes(const Tensor& x, const QuantizerParams& q) {
    validate(q);
    if (q.bits == kFullBits) {
        throw std::invalid_argument("quantize_codes: full-precision tensors have no integer codes");
    }
    const double scale = static_cast<double>(q.scale);
    const double z = static_cast<double>(q.zero_point);
    const double n = static_cast<double>(q.n());
    const double p = static_cast<double>(q.p());
    std::vector<std::int32_t> codes(static_cast<std::size_t>(x.numel()));
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double t = static_cast<double>(x[i]) / scale + z;
        codes[static_cast<std::size_t>(i)] =
            static_cast<std::int32_t>(std::clamp(round_half_even(t), n, p));
    }
    return codes;
}

Tensor dequantize_codes(const std::vector<std::int32_t>& codes, const std::vector<int>& shape,
                        const QuantizerParams& q) {
    validate(q);
    if (q.bits == kFullBits) {
        throw std::invalid_argument("dequantize_codes: full-precision tensors have no integer codes");
    }
    if (shape_numel(shape) != static_cast<int64_t>(codes.size())) {
        throw std::invalid_argument("dequantize_codes: shape " + shape_str(shape) + " does not hold " +
                                    std::to_string(codes.size()) + " codes");
    }
    const double scale = static_cast<double>(q.scale);
    const double z = static_cast<double>(q.zero_point);
    Tensor out(shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
        const double c = static_cast<double>(codes[static_cast<std::size_t>(i)]);
        out[i] = static_cast<float>((c - z) * scale);
    }
    return out;
}

Var fake_quantize_op(Graph& g, Var x, Var scale, Var zero, int bits, QuantKind kind) {
    if (!is_valid_bits(bits)) {
        throw std::invalid_argument("fake_quantize_op: unsupported bit-width " + std::to_string(bits));
    }
    if (bits == kFullBits) return x;
    if (scale.value().numel() != 1 || zero.value().numel() != 1) {
        throw std::invalid_argument("fake_quantize_op: scale and zero_point must be scalars");
    }
    QuantizerParams q;
    q.bits = bits;
    q.kind = kind;
    q.scale = scale.value()[0];
    q.zero_point = zero.value()[0];
    q.initialized = true;
    const int ix = x.id, is = scale.id, iz = zero.id;
    const int id = g.add_node(fake_quantize(x.value(), q), {ix, is, iz},
                              [ix, is, iz, bits, kind](Graph& gr, int self) {
        QuantizerParams qb;
        qb.bits = bits;
        qb.kind = kind;
        qb.scale = gr.value(is)[0];
        qb.zero_point = gr.value(iz)[0];
        qb.initialized = true;
        const FakeQuantGrads grads = fake_quantize_backward(gr.grad(self), gr.value(ix), qb);
        if (gr.requires_grad(ix)) {
            Tensor& dx = gr.grad_ref(ix);
            for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += grads.dx[i];
        }
        if (gr.requires_grad(is)) gr.grad_ref(is)[0] += grads.dscale;
        if (kind == QuantKind::activation && gr.requires_grad(iz)) gr.grad_ref(iz)[0] += grads.dzero;
    });
    return Var{&g, id};
}

Var minmax_quantize_op(Graph& g, Var x, int bits) {
    const int ix = x.id;
    const int id = g.add_node(minmax_quantize_static(x.value(), bits), {ix}, [ix](Graph& gr, int self) {
        if (!gr.requires_grad(ix)) return;
        const Tensor& up = gr.grad(self);
        Tensor& dx = gr.grad_ref(ix);
        for (int64_t i = 0; i < up.numel(); ++i) dx[i] += up[i];
    });
    return Var{&g, id};
}

std::string QuantizerBank::key(const std::string& layer, QuantKind kind, int bits) {
    return layer + (kind == QuantKind::weight ? "|w" : "|a") + std::to_string(bits);
}

QuantizerParams& QuantizerBank::ensure(const std::string& layer, QuantKind kind, int bits) {
    if (!is_quantized_bits(bits)) {
        throw std::invalid_argument("QuantizerBank: unsupported bit-width " + std::to_string(bits));
    }
    auto [it, inserted] = entries_.try_emplace(key(layer, kind, bits));
    if (inserted) {
        it->second.bits = bits;
        it->second.kind = kind;
        it->second.initialized = false;
    }
    return it->second;
}

QuantizerParams& QuantizerBank::at(const std::string& layer, QuantKind kind, int bits) {
    auto it = entries_.find(key(layer, kind, bits));
    if (it == entries_.end()) {
        throw std::out_of_range("QuantizerBank: no entry " + key(layer, kind, bits));
    }
    return it->second;
}

const QuantizerParams& QuantizerBank::at(const std::string& layer, QuantKind kind, int bits) const {
    auto it = entries_.find(key(layer, kind, bits));
    if (it == entries_.end()) {
        throw std::out_of_range("QuantizerBank: no entry " + key(layer, kind, bits));
    }
    return it->second;
}

bool QuantizerBank::contains(const std::string& layer, QuantKind kind, int bits) const {
    return entries_.find(key(layer, kind, bits)) != entries_.end();
}

} // namespace qnas
