// SPDX-License-Identifier: Apache-2.0
#include "qnas/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace qnas {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

void check_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
    }
}

} // namespace

Tensor k_add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

Tensor k_mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
    return out;
}

Tensor k_scale(const Tensor& a, float c) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * c;
    return out;
}

Tensor k_add_rowvec(const Tensor& x, const Tensor& v) {
    check_2d(x, "add_rowvec");
    if (v.ndim() != 1 || v.dim(0) != x.dim(1)) {
        throw std::invalid_argument("add_rowvec: vector " + shape_str(v.shape()) +
                                    " does not match " + shape_str(x.shape()));
    }
    Tensor out(x.shape());
    const int n = x.dim(0), d = x.dim(1);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) out.at(r, c) = x.at(r, c) + v[c];
    return out;
}

Tensor k_mul_rowvec(const Tensor& x, const Tensor& v) {
    check_2d(x, "mul_rowvec");
    if (v.ndim() != 1 || v.dim(0) != x.dim(1)) {
        throw std::invalid_argument("mul_rowvec: vector " + shape_str(v.shape()) +
                                    " does not match " + shape_str(x.shape()));
    }
    Tensor out(x.shape());
    const int n = x.dim(0), d = x.dim(1);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) out.at(r, c) = x.at(r, c) * v[c];
    return out;
}

Tensor k_matmul(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a.shape()) +
                                    " @ " + shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        float* orow = out.data() + static_cast<int64_t>(i) * n;
        const float* arow = a.data() + static_cast<int64_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const float av = arow[kk];
            const float* brow = b.data() + static_cast<int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor k_linear(const Tensor& x, const Tensor& w) {
    check_2d(x, "linear");
    check_2d(w, "linear");
    if (x.dim(1) != w.dim(1)) {
        throw std::invalid_argument("linear: feature extents differ, " + shape_str(x.shape()) +
                                    " vs weight " + shape_str(w.shape()));
    }
    const int n = x.dim(0), k = x.dim(1), d = w.dim(0);
    Tensor out({n, d});
    for (int i = 0; i < n; ++i) {
        const float* xrow = x.data() + static_cast<int64_t>(i) * k;
        float* orow = out.data() + static_cast<int64_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            const float* wrow = w.data() + static_cast<int64_t>(j) * k;
            float acc = 0.0f;
            for (int kk = 0; kk < k; ++kk) acc += xrow[kk] * wrow[kk];
            orow[j] = acc;
        }
    }
    return out;
}

Tensor k_transpose(const Tensor& a) {
    check_2d(a, "transpose");
    const int m = a.dim(0), n = a.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor k_relu(const Tensor& x) {
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
    return out;
}

Tensor k_gelu(const Tensor& x) {
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float v = x[i];
        out[i] = 0.5f * v * (1.0f + std::erf(v * 0.70710678118654752440f));
    }
    return out;
}

Tensor k_softmax_rows(const Tensor& x) {
    check_2d(x, "softmax");
    const int n = x.dim(0), d = x.dim(1);
    Tensor out(x.shape());
    for (int r = 0; r < n; ++r) {
        const float* row = x.data() + static_cast<int64_t>(r) * d;
        float* orow = out.data() + static_cast<int64_t>(r) * d;
        float m = row[0];
        for (int c = 1; c < d; ++c) m = std::max(m, row[c]);
        float denom = 0.0f;
        for (int c = 0; c < d; ++c) {
            orow[c] = std::exp(row[c] - m);
            denom += orow[c];
        }
        for (int c = 0; c < d; ++c) orow[c] /= denom;
    }
    return out;
}

Tensor k_layernorm_rows(const Tensor& x, float eps) {
    check_2d(x, "layernorm");
    const int n = x.dim(0), d = x.dim(1);
    if (d < 1) throw std::invalid_argument("layernorm: zero-length feature axis");
    Tensor out(x.shape());
    for (int r = 0; r < n; ++r) {
        const float* row = x.data() + static_cast<int64_t>(r) * d;
        float* orow = out.data() + static_cast<int64_t>(r) * d;
        float mean = 0.0f;
        for (int c = 0; c < d; ++c) mean += row[c];
        mean /= static_cast<float>(d);
        float var = 0.0f;
        for (int c = 0; c < d; ++c) {
            const float diff = row[c] - mean;
            var += diff * diff;
        }
        var /= static_cast<float>(d);
        const float inv = 1.0f / std::sqrt(var + eps);
        for (int c = 0; c < d; ++c) orow[c] = (row[c] - mean) * inv;
    }
    return out;
}

Tensor k_patchify(const Tensor& image, int patch) {
    if (image.ndim() != 3) {
        throw std::invalid_argument("patchify: expected [h x w x c] image, got " + shape_str(image.shape()));
    }
    const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (patch <= 0 || h % patch != 0 || w % patch != 0) {
        throw std::invalid_argument("patchify: image " + shape_str(image.shape()) +
                                    " not divisible by patch " + std::to_string(patch));
    }
    const int th = h / patch, tw = w / patch;
    const int feat = patch * patch * c;
    Tensor out({th * tw, feat});
    for (int ty = 0; ty < th; ++ty) {
        for (int tx = 0; tx < tw; ++tx) {
            float* orow = out.data() + static_cast<int64_t>(ty * tw + tx) * feat;
            for (int py = 0; py < patch; ++py) {
                for (int px = 0; px < patch; ++px) {
                    const int64_t src = (static_cast<int64_t>(ty * patch + py) * w + (tx * patch + px)) * c;
                    for (int ch = 0; ch < c; ++ch) {
                        orow[(py * patch + px) * c + ch] = image[src + ch];
                    }
                }
            }
        }
    }
    return out;
}

Tensor k_bilinear_resize(const Tensor& grid, int new_h, int new_w) {
    if (grid.ndim() != 3) {
        throw std::invalid_argument("bilinear_resize: expected [h x w x c] grid, got " + shape_str(grid.shape()));
    }
    if (new_h < 1 || new_w < 1) {
        throw std::invalid_argument("bilinear_resize: non-positive target size " + std::to_string(new_h) +
                                    "x" + std::to_string(new_w));
    }
    const int h = grid.dim(0), w = grid.dim(1), c = grid.dim(2);
    Tensor out({new_h, new_w, c});
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
            for (int ch = 0; ch < c; ++ch) {
                const float v00 = grid[(static_cast<int64_t>(y0) * w + x0) * c + ch];
                const float v01 = grid[(static_cast<int64_t>(y0) * w + x1) * c + ch];
                const float v10 = grid[(static_cast<int64_t>(y1) * w + x0) * c + ch];
                const float v11 = grid[(static_cast<int64_t>(y1) * w + x1) * c + ch];
                const float top = v00 + (v01 - v00) * fx;
                const float bot = v10 + (v11 - v10) * fx;
                out[(static_cast<int64_t>(y) * new_w + x) * c + ch] = top + (bot - top) * fy;
            }
        }
    }
    return out;
}

std::vector<double> k_cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels) {
    check_2d(logits, "cross_entropy");
    const int n = logits.dim(0), classes = logits.dim(1);
    if (static_cast<int>(labels.size()) != n) {
        throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(n) + " rows");
    }
    std::vector<double> losses(static_cast<size_t>(n));
    for (int r = 0; r < n; ++r) {
        const int y = labels[static_cast<size_t>(r)];
        if (y < 0 || y >= classes) {
            throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                                        std::to_string(classes) + ")");
        }
        const float* row = logits.data() + static_cast<int64_t>(r) * classes;
        float m = row[0];
        for (int c = 1; c < classes; ++c) m = std::max(m, row[c]);
        double denom = 0.0;
        for (int c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(row[c] - m));
        losses[static_cast<size_t>(r)] = std::log(denom) + static_cast<double>(m) - static_cast<double>(row[y]);
    }
    return losses;
}

} // namespace qnas
