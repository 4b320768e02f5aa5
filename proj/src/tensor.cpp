// SPDX-License-Identifier: Apache-2.0
#include "qnas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace qnas {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) {
            throw std::invalid_argument("tensor shape has non-positive extent " + shape_str(shape));
        }
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_)) {
        throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::zeros(std::vector<int> shape) {
    return Tensor(std::move(shape));
}

Tensor Tensor::full(std::vector<int> shape, float value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

float Tensor::min_value() const {
    if (data_.empty()) throw std::invalid_argument("min_value on empty tensor");
    return *std::min_element(data_.begin(), data_.end());
}

float Tensor::max_value() const {
    if (data_.empty()) throw std::invalid_argument("max_value on empty tensor");
    return *std::max_element(data_.begin(), data_.end());
}

float round_half_even(float v) {
    const float fl = std::floor(v);
    const float frac = v - fl;
    if (frac > 0.5f) return fl + 1.0f;
    if (frac < 0.5f) return fl;
    return (std::fmod(fl, 2.0f) == 0.0f) ? fl : fl + 1.0f;
}

double round_half_even(double v) {
    const double fl = std::floor(v);
    const double frac = v - fl;
    if (frac > 0.5) return fl + 1.0;
    if (frac < 0.5) return fl;
    return (std::fmod(fl, 2.0) == 0.0) ? fl : fl + 1.0;
}

} // namespace qnas
