// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace qnas {

/// Dense row-major float32 tensor. Value semantics; shapes are small
/// vectors of positive extents.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<float> values);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, float value);

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 2-D accessors (row, col); bounds unchecked in release paths.
    float& at(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
    float at(int r, int c) const { return data_[static_cast<size_t>(r) * shape_[1] + c]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    float min_value() const;
    float max_value() const;

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

/// Round to nearest integer, ties to even. Used everywhere a float is
/// mapped to an integer grid so results are deterministic.
float round_half_even(float v);
double round_half_even(double v);

} // namespace qnas
