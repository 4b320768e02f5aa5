// SPDX-License-Identifier: Apache-2.0
#include "qnas/data.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "qnas/kernels.hpp"
#include "qnas/rng.hpp"

namespace qnas {
namespace {

// Intensity bands per class. The gaps between bands keep the classes
// separable even after bilinear downscaling mixes neighbouring pixels.
constexpr float kNoiseLo = 0.0f, kNoiseHi = 0.35f;
constexpr float kSquareLo = 0.45f, kSquareHi = 0.70f;
constexpr float kCircleLo = 0.75f, kCircleHi = 1.00f;

SyntheticSample make_sample(int res, Rng& rng) {
    SyntheticSample s;
    s.image = Tensor::zeros({res, res, 1});
    s.labels.assign(static_cast<std::size_t>(res) * res, kClassBackground);
    for (std::int64_t i = 0; i < s.image.numel(); ++i) {
        s.image[i] = rng.uniform(kNoiseLo, kNoiseHi);
    }

    // The square lives in the left half, the disc in the right half, so the
    // two never overlap. Side/radius bounds give each shape 9% to 18% of the
    // pixels, comfortably above the 5% floor with the rest as background.
    const int half = res / 2;
    const int side = std::min(half, static_cast<int>(std::lround((0.30 + 0.12 * rng.uniform01()) * res)));
    const int sq_row = rng.uniform_int(res - side + 1);
    const int sq_col = rng.uniform_int(half - side + 1);
    for (int r = sq_row; r < sq_row + side; ++r) {
        for (int c = sq_col; c < sq_col + side; ++c) {
            s.image[(static_cast<std::int64_t>(r) * res + c)] = rng.uniform(kSquareLo, kSquareHi);
            s.labels[static_cast<std::size_t>(r) * res + c] = kClassSquare;
        }
    }

    const int radius = std::min((res - half - 1) / 2,
                                static_cast<int>(std::lround((0.17 + 0.05 * rng.uniform01()) * res)));
    const int cy = radius + rng.uniform_int(res - 2 * radius);
    const int cx = half + radius + rng.uniform_int(res - half - 2 * radius);
    for (int r = cy - radius; r <= cy + radius; ++r) {
        for (int c = cx - radius; c <= cx + radius; ++c) {
            const double dy = r - cy, dx = c - cx;
            if (dy * dy + dx * dx <= static_cast<double>(radius) * radius) {
                s.image[(static_cast<std::int64_t>(r) * res + c)] = rng.uniform(kCircleLo, kCircleHi);
                s.labels[static_cast<std::size_t>(r) * res + c] = kClassCircle;
            }
        }
    }
    return s;
}

} // namespace

Dataset gen_synthetic(const std::string& task, int count, int resolution, std::uint64_t seed) {
    if (task != "shapes-seg") {
        throw std::invalid_argument("unsupported task: " + task);
    }
    if (count < 1) {
        throw std::invalid_argument("dataset count must be at least 1");
    }
    if (resolution < 16) {
        throw std::invalid_argument("dataset resolution must be at least 16");
    }
    Dataset ds;
    ds.resolution = resolution;
    ds.num_classes = 3;
    ds.samples.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng(Rng::derive_seed(seed, "data.sample." + std::to_string(i)));
        ds.samples.push_back(make_sample(resolution, rng));
    }
    return ds;
}

SyntheticSample downscale_sample(const SyntheticSample& s, int src_resolution, int dst_resolution) {
    if (dst_resolution == src_resolution) {
        return s;
    }
    if (dst_resolution > src_resolution) {
        throw std::invalid_argument("downscale target exceeds source resolution");
    }
    SyntheticSample out;
    out.image = k_bilinear_resize(s.image, dst_resolution, dst_resolution);
    out.labels.assign(static_cast<std::size_t>(dst_resolution) * dst_resolution, 0);
    const double ratio = dst_resolution > 1
        ? static_cast<double>(src_resolution - 1) / (dst_resolution - 1)
        : 0.0;
    for (int r = 0; r < dst_resolution; ++r) {
        const int sr = static_cast<int>(std::lround(r * ratio));
        for (int c = 0; c < dst_resolution; ++c) {
            const int sc = static_cast<int>(std::lround(c * ratio));
            out.labels[static_cast<std::size_t>(r) * dst_resolution + c] =
                s.labels[static_cast<std::size_t>(sr) * src_resolution + sc];
        }
    }
    return out;
}

} // namespace qnas
