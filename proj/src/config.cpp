// SPDX-License-Identifier: Apache-2.0
#include "qnas/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace qnas {
namespace {

using json = nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw std::runtime_error("config: " + where + ": " + what);
}

// Every block lists its legal keys up front; anything else is a typo we
// refuse to guess about.
void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    if (!obj.is_object()) fail(where, "expected an object");
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) fail(where, "unknown key \"" + key + "\"");
    }
}

template <typename T>
T get_or(const json& obj, const std::string& where, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        fail(where, "key \"" + key + "\" has the wrong type");
    }
}

void parse_space(const json& j, SearchSpace& space) {
    check_keys(j, "search_space",
               {"resolutions", "depths", "mlp_ratios", "weight_bits", "act_bits"});
    space.resolutions = get_or(j, "search_space", "resolutions", space.resolutions);
    space.depth_options = get_or(j, "search_space", "depths", space.depth_options);
    space.mlp_ratios = get_or(j, "search_space", "mlp_ratios", space.mlp_ratios);
    space.weight_bits = get_or(j, "search_space", "weight_bits", space.weight_bits);
    space.act_bits = get_or(j, "search_space", "act_bits", space.act_bits);
}

void parse_model(const json& j, SearchSpace& space) {
    check_keys(j, "model", {"embed_dim", "patch", "heads", "in_channels", "num_classes"});
    space.embed_dim = get_or(j, "model", "embed_dim", space.embed_dim);
    space.patch = get_or(j, "model", "patch", space.patch);
    space.heads = get_or(j, "model", "heads", space.heads);
    space.in_channels = get_or(j, "model", "in_channels", space.in_channels);
    space.num_classes = get_or(j, "model", "num_classes", space.num_classes);
}

void parse_schedule(const json& j, TrainSchedule& s) {
    check_keys(j, "schedule",
               {"total_steps", "phase1_steps", "phase1_max_resolution", "phase2_max_resolution",
                "lr", "weight_decay", "batch_size", "subnets_per_step", "seed"});
    s.total_steps = get_or(j, "schedule", "total_steps", s.total_steps);
    s.phase1_steps = get_or(j, "schedule", "phase1_steps", s.phase1_steps);
    s.phase1_max_resolution = get_or(j, "schedule", "phase1_max_resolution", s.phase1_max_resolution);
    s.phase2_max_resolution = get_or(j, "schedule", "phase2_max_resolution", s.phase2_max_resolution);
    s.lr = get_or(j, "schedule", "lr", s.lr);
    s.weight_decay = get_or(j, "schedule", "weight_decay", s.weight_decay);
    s.batch_size = get_or(j, "schedule", "batch_size", s.batch_size);
    s.subnets_per_step = get_or(j, "schedule", "subnets_per_step", s.subnets_per_step);
    s.seed = get_or(j, "schedule", "seed", s.seed);
}

void parse_lora(const json& j, LoraSettings& l) {
    check_keys(j, "lora", {"rank", "scaling", "mode", "bit_groups", "detach", "switch_key"});
    l.rank = get_or(j, "lora", "rank", l.rank);
    l.scaling = get_or(j, "lora", "scaling", l.scaling);
    try {
        if (j.contains("mode")) l.mode = parse_lora_mode(j.at("mode").get<std::string>());
        if (j.contains("switch_key")) {
            l.switch_key = parse_switch_key(j.at("switch_key").get<std::string>());
        }
    } catch (const std::invalid_argument& e) {
        fail("lora", e.what());
    }
    l.bit_groups = get_or(j, "lora", "bit_groups", l.bit_groups);
    l.detach = get_or(j, "lora", "detach", l.detach);
    if (l.rank < 1) fail("lora", "rank must be >= 1");
    if (!(l.scaling > 0.0f)) fail("lora", "scaling must be > 0");
    std::vector<int> flat;
    for (const auto& group : l.bit_groups) flat.insert(flat.end(), group.begin(), group.end());
    std::sort(flat.begin(), flat.end());
    if (flat != std::vector<int>{2, 3, 4, 8, kFullBits}) {
        fail("lora", "bit_groups must partition {2, 3, 4, 8, 32}");
    }
}

void parse_search(const json& j, SearchSettings& s) {
    check_keys(j, "search",
               {"budget_fraction", "population", "parents", "mutation_prob", "mutation_pool",
                "crossover_pool", "epochs", "reject_cap", "eval_samples"});
    s.budget_fraction = get_or(j, "search", "budget_fraction", s.budget_fraction);
    s.hyper.population = get_or(j, "search", "population", s.hyper.population);
    s.hyper.parents = get_or(j, "search", "parents", s.hyper.parents);
    s.hyper.mutation_prob = get_or(j, "search", "mutation_prob", s.hyper.mutation_prob);
    s.hyper.mutation_pool = get_or(j, "search", "mutation_pool", s.hyper.mutation_pool);
    s.hyper.crossover_pool = get_or(j, "search", "crossover_pool", s.hyper.crossover_pool);
    s.hyper.epochs = get_or(j, "search", "epochs", s.hyper.epochs);
    s.hyper.reject_cap = get_or(j, "search", "reject_cap", s.hyper.reject_cap);
    s.eval_samples = get_or(j, "search", "eval_samples", s.eval_samples);
    if (!(s.budget_fraction > 0.0) || s.budget_fraction > 1.0) {
        fail("search", "budget_fraction must be in (0, 1]");
    }
    if (s.eval_samples < 0) fail("search", "eval_samples must be >= 0");
}

void parse_data(const json& j, DataSettings& d) {
    check_keys(j, "data", {"task", "train_count", "val_count", "resolution", "seed"});
    d.task = get_or(j, "data", "task", d.task);
    d.train_count = get_or(j, "data", "train_count", d.train_count);
    d.val_count = get_or(j, "data", "val_count", d.val_count);
    d.resolution = get_or(j, "data", "resolution", d.resolution);
    d.seed = get_or(j, "data", "seed", d.seed);
    if (d.train_count < 1) fail("data", "train_count must be >= 1");
    if (d.val_count < 1) fail("data", "val_count must be >= 1");
}

} // namespace

SearchSpace desk_default_space() {
    SearchSpace space;
    space.resolutions = {32, 48, 64};
    space.depth_options = {{1, 2, 3}, {1, 2, 3}};
    space.mlp_ratios = {2.0, 4.0};
    space.weight_bits = {2, 3, 4, 8, kFullBits};
    space.act_bits = {2, 3, 4, 8, kFullBits};
    space.embed_dim = 32;
    space.patch = 8;
    space.heads = 4;
    space.in_channels = 1;
    space.num_classes = 3;
    return space;
}

ExperimentConfig parse_experiment_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("config: not valid JSON: ") + e.what());
    }
    check_keys(root, "top level",
               {"search_space", "model", "schedule", "lora", "search", "data", "output_dir"});

    ExperimentConfig cfg;
    cfg.space = desk_default_space();
    cfg.raw_text = text;
    if (root.contains("search_space")) parse_space(root.at("search_space"), cfg.space);
    if (root.contains("model")) parse_model(root.at("model"), cfg.space);
    if (root.contains("schedule")) parse_schedule(root.at("schedule"), cfg.schedule);
    if (root.contains("lora")) parse_lora(root.at("lora"), cfg.lora);
    if (root.contains("search")) parse_search(root.at("search"), cfg.search);
    if (root.contains("data")) parse_data(root.at("data"), cfg.data);
    cfg.output_dir = get_or(root, "top level", "output_dir", cfg.output_dir);

    try {
        cfg.space.validate();
        cfg.schedule.validate();
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("config: ") + e.what());
    }
    int min_res = cfg.space.resolutions.front();
    for (int r : cfg.space.resolutions) min_res = std::min(min_res, r);
    if (min_res > cfg.schedule.phase1_max_resolution) {
        fail("schedule", "phase1_max_resolution leaves no sampleable resolution");
    }
    if (cfg.data.resolution < cfg.space.max_resolution()) {
        fail("data", "resolution " + std::to_string(cfg.data.resolution) +
                         " is below the space's largest input " +
                         std::to_string(cfg.space.max_resolution()));
    }
    if (cfg.data.task != "shapes-seg") fail("data", "unsupported task \"" + cfg.data.task + "\"");
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_experiment_config(buf.str());
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string(e.what()) + " (" + path + ")");
    }
}

} // namespace qnas
