// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qnas/rng.hpp"
#include "qnas/search_space.hpp"

namespace qnas {

struct EvolutionHyper {
    int population = 50;
    int parents = 10;
    double mutation_prob = 0.4;
    int mutation_pool = 25;
    int crossover_pool = 25;
    int epochs = 5;
    // Feasible-config rejection sampling gives up after this many draws for a
    // single slot and reports the budget as unsatisfiable.
    int reject_cap = 100;
};

struct GenerationRecord {
    int generation = 0;
    double best_loss = 0.0;
    std::int64_t best_bitops = 0;
    std::string best_config;
};

struct EvolutionResult {
    SubnetConfig best;
    double best_loss = 0.0;
    std::vector<GenerationRecord> history;
};

// Resamples each field of the config independently with probability p. A
// depth change re-sizes that stage's per-layer ratio and bit lists: dropped
// layers lose their entries, grown layers get fresh uniform draws. Surviving
// per-layer entries then face their own resample coin.
SubnetConfig mutate(const SubnetConfig& cfg, const SearchSpace& space, double p, Rng& rng);

// Uniform crossover: resolution and patch bits each come from one parent by
// fair coin; each stage's depth is taken jointly with that stage's ratio and
// bit sublists so per-layer lists always match the chosen depth.
SubnetConfig crossover(const SubnetConfig& a, const SubnetConfig& b, Rng& rng);

// Evolutionary search under a BitOPs budget. Seeds the population by
// rejection-sampling feasible configs, then for each later generation keeps
// the best `parents` evaluated so far and refills the population with
// mutation and crossover offspring (infeasible offspring are rejected and
// redrawn). eval_fn must be deterministic; lower is better. Returns the best
// feasible config seen and one history record per generation.
EvolutionResult evolve_search(const SearchSpace& space,
                              const std::function<double(const SubnetConfig&)>& eval_fn,
                              std::int64_t budget, const EvolutionHyper& hyper, Rng& rng);

// CSV with header generation,best_loss,best_bitops,config.
std::string history_csv(const std::vector<GenerationRecord>& history);

} // namespace qnas
