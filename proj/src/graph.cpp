// SPDX-License-Identifier: Apache-2.0
#include "qnas/graph.hpp"

#include <cmath>
#include <stdexcept>

#include "qnas/kernels.hpp"

namespace qnas {

const Tensor& Var::value() const { return graph->value(id); }
const Tensor& Var::grad() const { return graph->grad(id); }
const std::vector<int>& Var::shape() const { return graph->value(id).shape(); }

void Graph::check_owned(Var v, const char* op) const {
    if (v.graph != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
        throw std::invalid_argument(std::string(op) + ": variable does not belong to this graph");
    }
}

int Graph::add_node(Tensor value, std::vector<int> inputs, BackwardFn backward) {
    Node node;
    node.grad = Tensor(value.shape());
    node.value = std::move(value);
    node.inputs = std::move(inputs);
    node.backward = std::move(backward);
    for (int in : node.inputs) {
        if (nodes_[static_cast<size_t>(in)].requires_grad) {
            node.requires_grad = true;
            break;
        }
    }
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

const Tensor& Graph::value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
const Tensor& Graph::grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
Tensor& Graph::grad_ref(int id) { return nodes_[static_cast<size_t>(id)].grad; }
bool Graph::requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

Var Graph::leaf(Tensor value, bool requires_grad) {
    const int id = add_node(std::move(value), {}, nullptr);
    nodes_[static_cast<size_t>(id)].requires_grad = requires_grad;
    return wrap(id);
}

Var Graph::constant(Tensor value) { return leaf(std::move(value), false); }

Var Graph::add(Var a, Var b) {
    check_owned(a, "add");
    check_owned(b, "add");
    const int ia = a.id, ib = b.id;
    const int id = add_node(k_add(a.value(), b.value()), {ia, ib}, [ia, ib](Graph& g, int self) {
        const Tensor& up = g.grad(self);
        if (g.requires_grad(ia)) {
            Tensor& da = g.grad_ref(ia);
            for (int64_t i = 0; i < up.numel(); ++i) da[i] += up[i];
        }
        if (g.requires_grad(ib)) {
            Tensor& db = g.grad_ref(ib);
            for (int64_t i = 0; i < up.numel(); ++i) db[i] += up[i];
        }
    });
    return wrap(id);
}

Var Graph::sub(Var a, Var b) {
    check_owned(a, "sub");
    check_owned(b, "sub");
    const int ia = a.id, ib = b.id;
    Tensor out = k_add(a.value(), k_scale(b.value(), -1.0f));
    const int id = add_node(std::move(out), {ia, ib}, [ia, ib](Graph& g, int self) {
        const Tensor& up = g.grad(self);
        if (g.requires_grad(ia)) {
            Tensor& da = g.grad_ref(ia);
            for (int64_t i = 0; i < up.numel(); ++i) da[i] += up[i];
        }
        if (g.requires_grad(ib)) {
            Tensor& db = g.grad_ref(ib);
            for (int64_t i = 0; i < up.numel(); ++i) db[i] -= up[i];
        }
    });
    return wrap(id);
}

Var Graph::mul(Var a, Var b) {
    check_owned(a, "mul");
    check_owned(b, "mul");
    const int ia = a.id, ib = b.id;
    const int id = add_node(k_mul(a.value(), b.value()), {ia, ib}, [ia, ib](Graph& g, int self) {
        const Tensor& up = g.grad(self);
        const Tensor& va = g.value(ia);
        const Tensor& vb = g.value(ib);
        if (g.requires_grad(ia)) {
            Tensor& da = g.grad_ref(ia);
            for (int64_t i = 0; i < up.numel(); ++i) da[i] += up[i] * vb[i];
        }
        if (g.requires_grad(ib)) {
            Tensor& db = g.grad_ref(ib);
            for (int64_t i = 0; i < up.numel(); ++i) db[i] += up[i] * va[i];
        }
    });
    return wrap(id);
}

Var Graph::scale(Var a, float c) {
    check_owned(a, "scale");
    const int ia = a.id;
    const int id = add_node(k_scale(a.value(), c), {ia}, [ia, c](Graph& g, int self) {
        if (!g.requires_grad(ia)) return;
        const Tensor& up = g.grad(self);
        Tensor& da = g.grad_ref(ia);
        for (int64_t i = 0; i < up.numel(); ++i) da[i] += up[i] * c;
    });
    return wrap(id);
}

Var Graph::add_rowvec(Var x, Var v) {
    check_owned(x, "add_rowvec");
    check_owned(v, "add_rowvec");
    const int ix = x.id, iv = v.id;
    const int id = add_node(k_add_rowvec(x.value(), v.value()), {ix, iv}, [ix, iv](Graph& g, int self) {
        const Tensor& up = g.grad(self);
        const int n = up.dim(0), d = up.dim(1);
        if (g.requires_grad(ix)) {
            Tensor& dx = g.grad_ref(ix);
            for (int64_t i = 0; i < up.numel(); ++i) dx[i] += up[i];
        }
        if (g.requires_grad(iv)) {
            Tensor& dv = g.grad_ref(iv);
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < d; ++c) dv[c] += up.at(r, c);
        }
    });
    return wrap(id);
}

Var Graph::mul_rowvec(Var x, Var v) {
    check_owned(x, "mul_rowvec");
    check_owned(v, "mul_rowvec");
    const int ix = x.id, iv = v.id;
    const int id = add_node(k_mul_rowvec(x.value(), v.value()), {ix, iv}, [ix, iv](Graph& g, int self) {
        const Tensor& up = g.grad(self);
        const Tensor& vx = g.value(ix);
        const Tensor& vv = g.value(iv);
        const int n = up.dim(0), d = up.dim(1);
        if (g.requires_grad(ix)) {
            Tensor& dx = g.grad_ref(ix);
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < d; ++c) dx.at(r, c) += up.at(r, c) * vv[c];
        }
        if (g.requires_grad(iv)) {
            Tensor& dv = g.grad_ref(iv);
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < d; ++c) dv[c] += up.at(r, c) * vx.at(r, c);
        }
    });
    return wrap(id);
}

Var Graph::matmul(Var a, Var b) {
    check_owned(a, "matmul");
    check_owned(b, "matmul");
    const int ia = a.id, ib = b.id;
    const int id = add_node(k_matmul(a.value(), b.value()), {ia, ib}, [ia, ib](Graph& g, int self) {
        const Tensor& up = g.grad(self);
        if (g.requires_grad(ia)) {
            Tensor da = k_matmul(up, k_transpose(g.value(ib)));
            Tensor& acc = g.grad_ref(ia);
            for (int64_t i = 0; i < da.numel(); ++i) acc[i] += da[i];
        }
        if (g.requires_grad(ib)) {
            Tensor db = k_matmul(k_transpose(g.value(ia)), up);
            Tensor& acc = g.grad_ref(ib);
            for (int64_t i = 0; i < db.numel(); ++i) acc[i] += db[i];
        }
    });
    return wrap(id);
}

Var Graph::linear(Var x, Var w) {
    check_owned(x, "linear");
    check_owned(w, "linear");
    const int ix = x.id, iw = w.id;
    const int id = add_node(k_linear(x.value(), w.value()), {ix, iw}, [ix, iw](Graph& g, int self) {
        const Tensor& up = g.grad(self); // [n x d]
        if (g.requires_grad(ix)) {
            Tensor dx = k_matmul(up, g.value(iw)); // [n x d] @ [d x k]
            Tensor& acc = g.grad_ref(ix);
            for (int64_t i = 0; i < dx.numel(); ++i) acc[i] += dx[i];
        }
        if (g.requires_grad(iw)) {
            Tensor dw = k_matmul(k_transpose(up), g.value(ix)); // [d x n] @ [n x k]
            Tensor& acc = g.grad_ref(iw);
            for (int64_t i = 0; i < dw.numel(); ++i) acc[i] += dw[i];
        }
    });
    return wrap(id);
}

Var Graph::transpose(Var a) {
    check_owned(a, "transpose");
    const int ia = a.id;
    const int id = add_node(k_transpose(a.value()), {ia}, [ia](Graph& g, int self) {
        if (!g.requires_grad(ia)) return;
        Tensor da = k_transpose(g.grad(self));
        Tensor& acc = g.grad_ref(ia);
        for (int64_t i = 0; i < da.numel(); ++i) acc[i] += da[i];
    });
    return wrap(id);
}

Var Graph::relu(Var x) {
    check_owned(x, "relu");
    const int ix = x.id;
    const int id = add_node(k_relu(x.value()), {ix}, [ix](Graph& g, int self) {
        if (!g.requires_grad(ix)) return;
        const Tensor& up = g.grad(self);
        const Tensor& vx = g.value(ix);
        Tensor& dx = g.grad_ref(ix);
        for (int64_t i = 0; i < up.numel(); ++i)
            if (vx[i] > 0.0f) dx[i] += up[i];
    });
    return wrap(id);
}

Var Graph::gelu(Var x) {
    check_owned(x, "gelu");
    const int ix = x.id;
    const int id = add_node(k_gelu(x.value()), {ix}, [ix](Graph& g, int self) {
        if (!g.requires_grad(ix)) return;
        const Tensor& up = g.grad(self);
        const Tensor& vx = g.value(ix);
        Tensor& dx = g.grad_ref(ix);
        for (int64_t i = 0; i < up.numel(); ++i) {
            const float v = vx[i];
            const float cdf = 0.5f * (1.0f + std::erf(v * 0.70710678118654752440f));
            const float pdf = 0.39894228040143267794f * std::exp(-0.5f * v * v);
            dx[i] += up[i] * (cdf + v * pdf);
        }
    });
    return wrap(id);
}

Var Graph::softmax_rows(Var x) {
    check_owned(x, "softmax_rows");
    const int ix = x.id;
    const int id = add_node(k_softmax_rows(x.value()), {ix}, [ix](Graph& g, int self) {
        if (!g.requires_grad(ix)) return;
        const Tensor& up = g.grad(self);
        const Tensor& y = g.value(self);
        Tensor& dx = g.grad_ref(ix);
        const int n = y.dim(0), d = y.dim(1);
        for (int r = 0; r < n; ++r) {
            float dot = 0.0f;
            for (int c = 0; c < d; ++c) dot += up.at(r, c) * y.at(r, c);
            for (int c = 0; c < d; ++c) dx.at(r, c) += (up.at(r, c) - dot) * y.at(r, c);
        }
    });
    return wrap(id);
}

Var Graph::layernorm_rows(Var x, float eps) {
    check_owned(x, "layernorm_rows");
    const int ix = x.id;
    const int id = add_node(k_layernorm_rows(x.value(), eps), {ix}, [ix, eps](Graph& g, int self) {
        if (!g.requires_grad(ix)) return;
        const Tensor& up = g.grad(self);
        const Tensor& vx = g.value(ix);
        const Tensor& y = g.value(self); // normalized rows
        Tensor& dx = g.grad_ref(ix);
        const int n = vx.dim(0), d = vx.dim(1);
        for (int r = 0; r < n; ++r) {
            float mean = 0.0f;
            for (int c = 0; c < d; ++c) mean += vx.at(r, c);
            mean /= static_cast<float>(d);
            float var = 0.0f;
            for (int c = 0; c < d; ++c) {
                const float diff = vx.at(r, c) - mean;
                var += diff * diff;
            }
            var /= static_cast<float>(d);
            const float inv = 1.0f / std::sqrt(var + eps);
            float up_mean = 0.0f, upy_mean = 0.0f;
            for (int c = 0; c < d; ++c) {
                up_mean += up.at(r, c);
                upy_mean += up.at(r, c) * y.at(r, c);
            }
            up_mean /= static_cast<float>(d);
            upy_mean /= static_cast<float>(d);
            for (int c = 0; c < d; ++c) {
                dx.at(r, c) += inv * (up.at(r, c) - up_mean - y.at(r, c) * upy_mean);
            }
        }
    });
    return wrap(id);
}

Var Graph::reshape(Var a, std::vector<int> shape) {
    check_owned(a, "reshape");
    if (shape_numel(shape) != a.value().numel()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.value().shape()) + " as " +
                                    shape_str(shape));
    }
    const int ia = a.id;
    Tensor out(shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i];
    const int id = add_node(std::move(out), {ia}, [ia](Graph& g, int self) {
        if (!g.requires_grad(ia)) return;
        const Tensor& up = g.grad(self);
        Tensor& da = g.grad_ref(ia);
        for (int64_t i = 0; i < up.numel(); ++i) da[i] += up[i];
    });
    return wrap(id);
}

Var Graph::slice_rows(Var a, int start, int count) {
    check_owned(a, "slice_rows");
    const Tensor& va = a.value();
    if (va.ndim() != 2 || start < 0 || count < 1 || start + count > va.dim(0)) {
        throw std::invalid_argument("slice_rows: rows [" + std::to_string(start) + ", " +
                                    std::to_string(start + count) + ") invalid for " + shape_str(va.shape()));
    }
    const int ia = a.id, d = va.dim(1);
    Tensor out({count, d});
    for (int r = 0; r < count; ++r)
        for (int c = 0; c < d; ++c) out.at(r, c) = va.at(start + r, c);
    const int id = add_node(std::move(out), {ia}, [ia, start, count, d](Graph& g, int self) {
        if (!g.requires_grad(ia)) return;
        const Tensor& up = g.grad(self);
        Tensor& da = g.grad_ref(ia);
        for (int r = 0; r < count; ++r)
            for (int c = 0; c < d; ++c) da.at(start + r, c) += up.at(r, c);
    });
    return wrap(id);
}

Var Graph::slice_cols(Var a, int start, int count) {
    check_owned(a, "slice_cols");
    const Tensor& va = a.value();
    if (va.ndim() != 2 || start < 0 || count < 1 || start + count > va.dim(1)) {
        throw std::invalid_argument("slice_cols: cols [" + std::to_string(start) + ", " +
                                    std::to_string(start + count) + ") invalid for " + shape_str(va.shape()));
    }
    const int ia = a.id, n = va.dim(0);
    Tensor out({n, count});
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < count; ++c) out.at(r, c) = va.at(r, start + c);
    const int id = add_node(std::move(out), {ia}, [ia, start, count, n](Graph& g, int self) {
        if (!g.requires_grad(ia)) return;
        const Tensor& up = g.grad(self);
        Tensor& da = g.grad_ref(ia);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < count; ++c) da.at(r, start + c) += up.at(r, c);
    });
    return wrap(id);
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    int total = 0;
    const int n = parts[0].value().dim(0);
    std::vector<int> ids;
    std::vector<int> widths;
    for (const Var& p : parts) {
        check_owned(p, "concat_cols");
        const Tensor& v = p.value();
        if (v.ndim() != 2 || v.dim(0) != n) {
            throw std::invalid_argument("concat_cols: row counts differ");
        }
        ids.push_back(p.id);
        widths.push_back(v.dim(1));
        total += v.dim(1);
    }
    Tensor out({n, total});
    int off = 0;
    for (size_t p = 0; p < ids.size(); ++p) {
        const Tensor& v = value(ids[p]);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < widths[p]; ++c) out.at(r, off + c) = v.at(r, c);
        off += widths[p];
    }
    const int id = add_node(std::move(out), ids, [ids, widths, n](Graph& g, int self) {
        const Tensor& up = g.grad(self);
        int off = 0;
        for (size_t p = 0; p < ids.size(); ++p) {
            if (g.requires_grad(ids[p])) {
                Tensor& da = g.grad_ref(ids[p]);
                for (int r = 0; r < n; ++r)
                    for (int c = 0; c < widths[p]; ++c) da.at(r, c) += up.at(r, off + c);
            }
            off += widths[p];
        }
    });
    return wrap(id);
}

Var Graph::bilinear_resize(Var grid, int new_h, int new_w) {
    check_owned(grid, "bilinear_resize");
    const int ig = grid.id;
    const Tensor& vg = grid.value();
    const int h = vg.dim(0), w = vg.dim(1), ch = vg.dim(2);
    const int id = add_node(k_bilinear_resize(vg, new_h, new_w), {ig},
                            [ig, h, w, ch, new_h, new_w](Graph& g, int self) {
        if (!g.requires_grad(ig)) return;
        const Tensor& up = g.grad(self);
        Tensor& dg = g.grad_ref(ig);
        const auto src_coord = [](int dst, int dst_size, int src_size) -> float {
            if (dst_size <= 1) return 0.0f;
            return static_cast<float>(dst) * static_cast<float>(src_size - 1) / static_cast<float>(dst_size - 1);
        };
        for (int y = 0; y < new_h; ++y) {
            const float sy = src_coord(y, new_h, h);
            const int y0 = static_cast<int>(std::floor(sy));
            const int y1 = std::min(y0 + 1, h - 1);
            const float fy = sy - static_cast<float>(y0);
            for (int x = 0; x < new_w; ++x) {
                const float sx = src_coord(x, new_w, w);
                const int x0 = static_cast<int>(std::floor(sx));
                const int x1 = std::min(x0 + 1, w - 1);
                const float fx = sx - static_cast<float>(x0);
                for (int cc = 0; cc < ch; ++cc) {
                    const float u = up[(static_cast<int64_t>(y) * new_w + x) * ch + cc];
                    dg[(static_cast<int64_t>(y0) * w + x0) * ch + cc] += u * (1.0f - fy) * (1.0f - fx);
                    dg[(static_cast<int64_t>(y0) * w + x1) * ch + cc] += u * (1.0f - fy) * fx;
                    dg[(static_cast<int64_t>(y1) * w + x0) * ch + cc] += u * fy * (1.0f - fx);
                    dg[(static_cast<int64_t>(y1) * w + x1) * ch + cc] += u * fy * fx;
                }
            }
        }
    });
    return wrap(id);
}

Var Graph::sum(Var a) {
    check_owned(a, "sum");
    const int ia = a.id;
    const Tensor& va = a.value();
    float total = 0.0f;
    for (int64_t i = 0; i < va.numel(); ++i) total += va[i];
    const int id = add_node(Tensor({1}, {total}), {ia}, [ia](Graph& g, int self) {
        if (!g.requires_grad(ia)) return;
        const float up = g.grad(self)[0];
        Tensor& da = g.grad_ref(ia);
        for (int64_t i = 0; i < da.numel(); ++i) da[i] += up;
    });
    return wrap(id);
}

Var Graph::mean_cross_entropy(Var logits, std::vector<int> labels) {
    check_owned(logits, "mean_cross_entropy");
    const int il = logits.id;
    const std::vector<double> losses = k_cross_entropy_rows(logits.value(), labels);
    double total = 0.0;
    for (double l : losses) total += l;
    const int n = logits.value().dim(0);
    Tensor out({1}, {static_cast<float>(total / static_cast<double>(n))});
    const int id = add_node(std::move(out), {il}, [il, labels](Graph& g, int self) {
        if (!g.requires_grad(il)) return;
        const float up = g.grad(self)[0];
        const Tensor probs = k_softmax_rows(g.value(il));
        Tensor& dl = g.grad_ref(il);
        const int n = probs.dim(0), classes = probs.dim(1);
        const float inv_n = 1.0f / static_cast<float>(n);
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < classes; ++c) {
                const float onehot = (c == labels[static_cast<size_t>(r)]) ? 1.0f : 0.0f;
                dl.at(r, c) += up * inv_n * (probs.at(r, c) - onehot);
            }
        }
    });
    return wrap(id);
}

Var Graph::detach(Var a) {
    check_owned(a, "detach");
    return constant(a.value());
}

void Graph::backward(Var loss) {
    check_owned(loss, "backward");
    if (loss.value().numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.value().shape()));
    }
    // Mark ancestors of the loss so unrelated nodes are skipped.
    std::vector<char> reachable(nodes_.size(), 0);
    std::vector<int> stack{loss.id};
    reachable[static_cast<size_t>(loss.id)] = 1;
    while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        for (int in : nodes_[static_cast<size_t>(id)].inputs) {
            if (!reachable[static_cast<size_t>(in)]) {
                reachable[static_cast<size_t>(in)] = 1;
                stack.push_back(in);
            }
        }
    }
    nodes_[static_cast<size_t>(loss.id)].grad[0] = 1.0f;
    for (int id = loss.id; id >= 0; --id) {
        Node& node = nodes_[static_cast<size_t>(id)];
        if (!reachable[static_cast<size_t>(id)] || !node.requires_grad || !node.backward) continue;
        node.backward(*this, id);
    }
}

} // namespace qnas
