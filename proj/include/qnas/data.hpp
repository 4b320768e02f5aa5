// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qnas/tensor.hpp"

namespace qnas {

// One segmentation sample: a single-channel image in [0,1] stored as
// [resolution, resolution, 1] and a per-pixel class index in row-major order.
struct SyntheticSample {
    Tensor image;
    std::vector<int> labels;
};

struct Dataset {
    std::vector<SyntheticSample> samples;
    int resolution = 0;
    int num_classes = 0;
};

inline constexpr int kClassBackground = 0;
inline constexpr int kClassSquare = 1;
inline constexpr int kClassCircle = 2;

// Generates the "shapes-seg" task: one filled square and one filled disc per
// image over uniform background noise, with the three intensity bands kept
// disjoint so the task is learnable by a small model. Shape sizes are chosen
// so every class covers at least 5% of the pixels in every image.
// Deterministic under (count, resolution, seed).
Dataset gen_synthetic(const std::string& task, int count, int resolution, std::uint64_t seed);

// Resizes a sample to a lower resolution: bilinear for the image, nearest
// neighbour (align-corners index mapping) for the labels.
SyntheticSample downscale_sample(const SyntheticSample& s, int src_resolution, int dst_resolution);

} // namespace qnas
