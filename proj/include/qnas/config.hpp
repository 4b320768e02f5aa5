// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "qnas/evolve.hpp"
#include "qnas/search_space.hpp"
#include "qnas/supernet.hpp"
#include "qnas/trainkit.hpp"

namespace qnas {

// Search-stage knobs grouped next to the evolution hyperparameters they
// feed. The budget is quoted as a fraction of the maximum-config BitOPs so
// the same config file scales with the space it declares.
struct SearchSettings {
    double budget_fraction = 0.25;
    EvolutionHyper hyper;
    int eval_samples = 8; // validation images per fitness call; 0 = all
};

// Synthetic dataset request. Images are generated at `resolution` and
// downscaled per sampled subnet, so it must cover the space's largest input.
struct DataSettings {
    std::string task = "shapes-seg";
    int train_count = 64;
    int val_count = 16;
    int resolution = 64;
    std::uint64_t seed = 0;
};

// One experiment file, fully parsed and validated. Every block is optional
// in the JSON and falls back to the desk-scale defaults below; unknown keys
// anywhere are an error. `raw_text` keeps the exact bytes that were parsed
// so checkpoints can fingerprint the producing config.
struct ExperimentConfig {
    SearchSpace space;
    TrainSchedule schedule;
    LoraSettings lora;
    SearchSettings search;
    DataSettings data;
    std::string output_dir = "runs/default";
    std::string raw_text;
};

// The two-stage, embed-32 space the committed example config uses.
SearchSpace desk_default_space();

// Parses and validates a JSON experiment config. Throws std::runtime_error
// naming the offending block/key on unknown keys, type errors, or values the
// sub-config validators reject.
ExperimentConfig parse_experiment_config(const std::string& text);

// parse_experiment_config over the file's bytes; the path joins the error
// message on failure.
ExperimentConfig load_experiment_config(const std::string& path);

} // namespace qnas
