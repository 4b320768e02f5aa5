// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "qnas/tensor.hpp"

namespace qnas {

class Graph;

// Lightweight handle into a Graph. Valid as long as the graph is alive.
struct Var {
    Graph* graph = nullptr;
    int id = -1;

    const Tensor& value() const;
    const Tensor& grad() const;
    const std::vector<int>& shape() const;
};

// Reverse-mode tape. One Graph per forward/backward pass; parameters live
// outside and enter as leaves, their gradients are read back after backward().
class Graph {
public:
    // Accumulates input gradients for one node. Receives the graph and the
    // node's own id; reads grad(id) and adds into grad(input).
    using BackwardFn = std::function<void(Graph&, int)>;

    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, float c);
    Var add_rowvec(Var x, Var v);
    Var mul_rowvec(Var x, Var v);
    Var matmul(Var a, Var b);
    Var linear(Var x, Var w); // y = x @ w^T, w stored [d_out x d_in]
    Var transpose(Var a);
    Var relu(Var x);
    Var gelu(Var x);
    Var softmax_rows(Var x);
    Var layernorm_rows(Var x, float eps);
    Var reshape(Var a, std::vector<int> shape);
    Var slice_rows(Var a, int start, int count);
    Var slice_cols(Var a, int start, int count);
    Var concat_cols(const std::vector<Var>& parts);
    Var bilinear_resize(Var grid, int new_h, int new_w);
    Var sum(Var a);
    Var mean_cross_entropy(Var logits, std::vector<int> labels);
    Var detach(Var a);

    // Seeds d(loss)/d(loss) = 1 and runs every reachable node's backward in
    // reverse creation order. The loss must be scalar.
    void backward(Var loss);

    // Extension point for ops defined outside this file (e.g. quantizers).
    // requires_grad of the new node is inherited from the inputs.
    int add_node(Tensor value, std::vector<int> inputs, BackwardFn backward);

    const Tensor& value(int id) const;
    const Tensor& grad(int id) const;
    Tensor& grad_ref(int id);
    bool requires_grad(int id) const;
    int size() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<int> inputs;
        BackwardFn backward;
        bool requires_grad = false;
    };

    Var wrap(int id) { return Var{this, id}; }
    void check_owned(Var v, const char* op) const;

    std::vector<Node> nodes_;
};

} // namespace qnas
