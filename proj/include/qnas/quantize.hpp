// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "qnas/graph.hpp"
#include "qnas/tensor.hpp"

namespace qnas {

// Bit-width sentinel for the full-precision bypass path.
inline constexpr int kFullBits = 32;

bool is_quantized_bits(int bits); // true for 2/3/4/8
bool is_valid_bits(int bits);     // quantized or kFullBits

enum class QuantKind { weight, activation };

// Learnable asymmetric quantizer state. The integer range is [n, p] with
// n = 0 and p = 2^bits - 1. Weight quantizers train scale only; activation
// quantizers train scale and zero_point.
struct QuantizerParams {
    int bits = kFullBits;
    float scale = 1.0f;
    float zero_point = 0.0f;
    QuantKind kind = QuantKind::weight;
    bool initialized = false;

    int n() const { return 0; }
    int p() const { return (1 << bits) - 1; }
};

// scale = (x_max - x_min) / (p - n), zero_point = clamp(round(-x_min/scale), n, p).
QuantizerParams init_quantizer(float x_min, float x_max, int bits, QuantKind kind);

// x_hat = (clamp(round(x/scale + z), n, p) - z) * scale; identity at kFullBits.
Tensor fake_quantize(const Tensor& x, const QuantizerParams& q);

struct FakeQuantGrads {
    Tensor dx;
    float dscale = 0.0f;
    float dzero = 0.0f;
};

// Straight-through estimator. With t = x/scale + z:
//   inside [n, p]: dx = up, dscale = up * (x_q - z - x/scale), dzero = 0
//   below n:       dx = 0,  dscale = up * (n - z), dzero = -up * scale
//   above p:       dx = 0,  dscale = up * (p - z), dzero = -up * scale
// Weight-kind quantizers never accumulate into dzero.
FakeQuantGrads fake_quantize_backward(const Tensor& upstream, const Tensor& x, const QuantizerParams& q);

// One-shot quantization over the tensor's own min/max, no learned state.
// A constant tensor is returned unchanged.
Tensor minmax_quantize_static(const Tensor& x, int bits = 8);

// Integer codes clamp(round(x/scale + z), n, p) and their exact inverse
// (code - z) * scale. dequantize(quantize(x)) equals fake_quantize(x)
// bitwise, so exported artifacts can store codes instead of reals.
std::vector<std::int32_t> quantize_codes(const Tensor& x, const QuantizerParams& q);
Tensor dequantize_codes(const std::vector<std::int32_t>& codes, const std::vector<int>& shape,
                        const QuantizerParams& q);

// Graph bindings. scale and zero are [1] leaves; gradients follow the STE
// rules above. At kFullBits x is returned untouched.
Var fake_quantize_op(Graph& g, Var x, Var scale, Var zero, int bits, QuantKind kind);
// Straight-through gradient: d(out)/dx = 1.
Var minmax_quantize_op(Graph& g, Var x, int bits = 8);

// One quantizer per (layer, kind, bits). Keys cover every candidate bit-width
// of every quantized layer; kFullBits has no entry (identity bypass).
class QuantizerBank {
public:
    QuantizerParams& ensure(const std::string& layer, QuantKind kind, int bits);
    QuantizerParams& at(const std::string& layer, QuantKind kind, int bits);
    const QuantizerParams& at(const std::string& layer, QuantKind kind, int bits) const;
    bool contains(const std::string& layer, QuantKind kind, int bits) const;

    static std::string key(const std::string& layer, QuantKind kind, int bits);

    std::map<std::string, QuantizerParams>& entries() { return entries_; }
    const std::map<std::string, QuantizerParams>& entries() const { return entries_; }

private:
    std::map<std::string, QuantizerParams> entries_;
};

} // namespace qnas
