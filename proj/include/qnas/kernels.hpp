// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "qnas/tensor.hpp"

namespace qnas {

// Pure forward kernels. The autodiff graph, the adapter merge path and the
// exported-subnet evaluator all call these, so the arithmetic is identical
// (bitwise) no matter which path computes a layer.

Tensor k_add(const Tensor& a, const Tensor& b);
Tensor k_mul(const Tensor& a, const Tensor& b);
Tensor k_scale(const Tensor& a, float c);
/// x: [n x d], v: [d]; adds v to every row.
Tensor k_add_rowvec(const Tensor& x, const Tensor& v);
Tensor k_mul_rowvec(const Tensor& x, const Tensor& v);

/// a: [m x k], b: [k x n] -> [m x n]
Tensor k_matmul(const Tensor& a, const Tensor& b);
/// x: [n x k], w: [d x k] -> x * w^T: [n x d]
Tensor k_linear(const Tensor& x, const Tensor& w);
Tensor k_transpose(const Tensor& a);

Tensor k_relu(const Tensor& x);
Tensor k_gelu(const Tensor& x);
Tensor k_softmax_rows(const Tensor& x);
Tensor k_layernorm_rows(const Tensor& x, float eps);

/// image: [h x w x c] -> [tokens x patch*patch*c], tokens scanned row-major.
Tensor k_patchify(const Tensor& image, int patch);

/// grid: [h x w x c] -> [new_h x new_w x c], align-corners bilinear.
Tensor k_bilinear_resize(const Tensor& grid, int new_h, int new_w);

/// logits: [n x classes]; returns per-row losses [n].
std::vector<double> k_cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels);

} // namespace qnas
