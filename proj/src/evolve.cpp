// SPDX-License-Identifier: Apache-2.0
#include "qnas/evolve.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "qnas/cost.hpp"

namespace qnas {
namespace {

struct StageSlice {
    int depth = 0;
    std::vector<double> ratios;
    std::vector<BitPair> bits;
};

// Per-layer lists are stored flattened over active layers; this recovers the
// per-stage view so depth edits can re-size the right span.
std::vector<StageSlice> split_stages(const SubnetConfig& cfg) {
    std::vector<StageSlice> out(cfg.depths.size());
    std::size_t off = 0;
    for (std::size_t s = 0; s < cfg.depths.size(); ++s) {
        out[s].depth = cfg.depths[s];
        for (int j = 0; j < cfg.depths[s]; ++j, ++off) {
            out[s].ratios.push_back(cfg.mlp_ratios[off]);
            out[s].bits.push_back(cfg.layer_bits[off]);
        }
    }
    return out;
}

SubnetConfig join_stages(int resolution, BitPair patch_bits, const std::vector<StageSlice>& stages) {
    SubnetConfig cfg;
    cfg.resolution = resolution;
    cfg.patch_bits = patch_bits;
    for (const StageSlice& s : stages) {
        cfg.depths.push_back(s.depth);
        cfg.mlp_ratios.insert(cfg.mlp_ratios.end(), s.ratios.begin(), s.ratios.end());
        cfg.layer_bits.insert(cfg.layer_bits.end(), s.bits.begin(), s.bits.end());
    }
    return cfg;
}

} // namespace

SubnetConfig mutate(const SubnetConfig& cfg, const SearchSpace& space, double p, Rng& rng) {
    int resolution = cfg.resolution;
    if (rng.bernoulli(p)) {
        resolution = rng.pick(space.resolutions);
    }
    std::vector<StageSlice> stages = split_stages(cfg);
    for (std::size_t s = 0; s < stages.size(); ++s) {
        StageSlice& st = stages[s];
        const int old_depth = st.depth;
        if (rng.bernoulli(p)) {
            st.depth = rng.pick(space.depth_options[s]);
        }
        st.ratios.resize(static_cast<std::size_t>(st.depth));
        st.bits.resize(static_cast<std::size_t>(st.depth));
        for (int j = 0; j < st.depth; ++j) {
            const bool fresh = j >= old_depth;
            if (fresh || rng.bernoulli(p)) {
                st.ratios[static_cast<std::size_t>(j)] = rng.pick(space.mlp_ratios);
            }
            if (fresh || rng.bernoulli(p)) {
                st.bits[static_cast<std::size_t>(j)] =
                    BitPair{rng.pick(space.weight_bits), rng.pick(space.act_bits)};
            }
        }
    }
    BitPair patch = cfg.patch_bits;
    if (rng.bernoulli(p)) {
        patch = BitPair{rng.pick(space.weight_bits), rng.pick(space.act_bits)};
    }
    return join_stages(resolution, patch, stages);
}

SubnetConfig crossover(const SubnetConfig& a, const SubnetConfig& b, Rng& rng) {
    if (a.depths.size() != b.depths.size()) {
        throw std::invalid_argument("crossover parents disagree on stage count");
    }
    const int resolution = rng.bernoulli(0.5) ? a.resolution : b.resolution;
    const std::vector<StageSlice> sa = split_stages(a);
    const std::vector<StageSlice> sb = split_stages(b);
    std::vector<StageSlice> stages;
    for (std::size_t s = 0; s < sa.size(); ++s) {
        stages.push_back(rng.bernoulli(0.5) ? sa[s] : sb[s]);
    }
    const BitPair patch = rng.bernoulli(0.5) ? a.patch_bits : b.patch_bits;
    return join_stages(resolution, patch, stages);
}

EvolutionResult evolve_search(const SearchSpace& space,
                              const std::function<double(const SubnetConfig&)>& eval_fn,
                              std::int64_t budget, const EvolutionHyper& hyper, Rng& rng) {
    space.validate();
    if (hyper.population < 1 || hyper.parents < 1 || hyper.epochs < 1 || hyper.reject_cap < 1 ||
        hyper.mutation_pool < 0 || hyper.crossover_pool < 0) {
        throw std::invalid_argument("evolution hyperparameters out of range");
    }
    if (hyper.mutation_pool + hyper.crossover_pool > hyper.population) {
        throw std::invalid_argument("offspring pools must not exceed the population size");
    }
    if (hyper.mutation_prob < 0.0 || hyper.mutation_prob > 1.0) {
        throw std::invalid_argument("mutation probability must lie in [0, 1]");
    }

    const auto feasible = [&](const SubnetConfig& cfg) {
        return bitops(cfg, space).grand_total <= budget;
    };
    // Rejection sampling with a bounded number of draws per population slot.
    const auto draw_feasible = [&](const std::function<SubnetConfig()>& propose) {
        for (int attempt = 0; attempt < hyper.reject_cap; ++attempt) {
            SubnetConfig cfg = propose();
            if (feasible(cfg)) return cfg;
        }
        throw std::runtime_error("budget infeasible: no config under the BitOPs budget after " +
                                 std::to_string(hyper.reject_cap) + " draws");
    };

    struct Candidate {
        double loss;
        std::string key;
        SubnetConfig cfg;
    };
    std::map<std::string, double> scores;
    std::vector<Candidate> seen;
    const auto evaluate = [&](const SubnetConfig& cfg) {
        const std::string key = to_subnet_string(cfg);
        auto it = scores.find(key);
        if (it != scores.end()) return;
        const double loss = eval_fn(cfg);
        scores.emplace(key, loss);
        seen.push_back(Candidate{loss, key, cfg});
    };
    const auto by_fitness = [](const Candidate& x, const Candidate& y) {
        return x.loss != y.loss ? x.loss < y.loss : x.key < y.key;
    };

    EvolutionResult result;
    std::vector<SubnetConfig> population;
    for (int g = 0; g < hyper.epochs; ++g) {
        population.clear();
        if (g == 0) {
            for (int i = 0; i < hyper.population; ++i) {
                population.push_back(draw_feasible([&] { return sample_uniform(space, rng); }));
            }
        } else {
            std::vector<Candidate> parents = seen;
            std::sort(parents.begin(), parents.end(), by_fitness);
            parents.resize(std::min<std::size_t>(parents.size(), static_cast<std::size_t>(hyper.parents)));
            for (int i = 0; i < hyper.mutation_pool; ++i) {
                population.push_back(draw_feasible([&] {
                    const Candidate& parent = parents[static_cast<std::size_t>(
                        rng.uniform_int(static_cast<int>(parents.size())))];
                    return mutate(parent.cfg, space, hyper.mutation_prob, rng);
                }));
            }
            for (int i = 0; i < hyper.crossover_pool; ++i) {
                population.push_back(draw_feasible([&] {
                    const Candidate& pa = parents[static_cast<std::size_t>(
                        rng.uniform_int(static_cast<int>(parents.size())))];
                    const Candidate& pb = parents[static_cast<std::size_t>(
                        rng.uniform_int(static_cast<int>(parents.size())))];
                    return crossover(pa.cfg, pb.cfg, rng);
                }));
            }
        }
        for (const SubnetConfig& cfg : population) {
            evaluate(cfg);
        }
        const Candidate best = *std::min_element(seen.begin(), seen.end(), by_fitness);
        GenerationRecord rec;
        rec.generation = g;
        rec.best_loss = best.loss;
        rec.best_bitops = bitops(best.cfg, space).grand_total;
        rec.best_config = best.key;
        result.history.push_back(rec);
        result.best = best.cfg;
        result.best_loss = best.loss;
    }
    return result;
}

std::string history_csv(const std::vector<GenerationRecord>& history) {
    std::string out = "generation,best_loss,best_bitops,config\n";
    char line[512];
    for (const GenerationRecord& rec : history) {
        std::snprintf(line, sizeof(line), "%d,%.17g,%lld,\"%s\"\n", rec.generation, rec.best_loss,
                      static_cast<long long>(rec.best_bitops), rec.best_config.c_str());
        out += line;
    }
    return out;
}

} // namespace qnas
