// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qnas/data.hpp"
#include "qnas/optim.hpp"
#include "qnas/rng.hpp"
#include "qnas/supernet.hpp"

namespace qnas {

// Two-phase progressive schedule: full-parameter training under the phase-1
// resolution cap, then adapters attach, the base freezes and the cap rises.
struct TrainSchedule {
    std::int64_t total_steps = 300;
    std::int64_t phase1_steps = 150;
    int phase1_max_resolution = 48;
    int phase2_max_resolution = 64;
    float lr = 1e-3f;
    float weight_decay = 1e-4f;
    int batch_size = 8;
    int subnets_per_step = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

// Everything that evolves during training. Checkpoints snapshot exactly this
// plus the model, so a resumed run replays an uninterrupted one.
struct TrainerState {
    ElasticViT model;
    AdamW opt;
    Rng rng;
    std::int64_t step = 0;
    TrainSchedule schedule;

    TrainerState(const SearchSpace& space, const TrainSchedule& sched);
};

struct MetricsRow {
    std::int64_t step = 0;
    int phase = 1;
    std::string config;
    double loss = 0.0;
    float lr = 0.0f;
};

// Header line step,phase,config,loss,lr; the config column is quoted.
std::string metrics_csv(const std::vector<MetricsRow>& rows);

// Runs up to `run_steps` steps (all remaining when negative). Per step: a
// seeded batch, `subnets_per_step` uniformly sampled configs capped at the
// phase resolution, mean cross-entropy, accumulated gradients, one optimizer
// update. At the phase boundary adapters attach and the base freezes.
// Throws on a non-finite loss, naming the step.
std::vector<MetricsRow> train_supernet(TrainerState& st, const Dataset& train,
                                       const LoraSettings& lora, std::int64_t run_steps = -1);

struct EvalMetrics {
    double loss = 0.0;
    double pixel_accuracy = 0.0;
    double mean_iou = 0.0;
};

// Deterministic metrics of one subnet over the first `max_samples` samples
// (all when 0). Mean per-pixel cross-entropy, argmax pixel accuracy, and
// IoU averaged over the classes present in labels or predictions.
EvalMetrics evaluate(ElasticViT& model, const SubnetConfig& cfg, const Dataset& val,
                     int max_samples = 0);

} // namespace qnas
