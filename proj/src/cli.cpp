// SPDX-License-Identifier: Apache-2.0
#include "qnas/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qnas/checkpoint.hpp"
#include "qnas/config.hpp"
#include "qnas/cost.hpp"
#include "qnas/data.hpp"
#include "qnas/evolve.hpp"
#include "qnas/export.hpp"
#include "qnas/trainkit.hpp"

namespace qnas {
namespace {

namespace fs = std::filesystem;

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.good()) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

Dataset split_dataset(const DataSettings& d, const std::string& split, int count) {
    return gen_synthetic(d.task, count, d.resolution, Rng::derive_seed(d.seed, "data." + split));
}

// One deterministic maximum-resolution image used to seed any quantizer
// entry a command needs that training never touched.
Tensor calibration_image(const SearchSpace& space, const DataSettings& d) {
    const Dataset one =
        gen_synthetic(d.task, 1, space.max_resolution(), Rng::derive_seed(d.seed, "data.calib"));
    return one.samples[0].image;
}

// --subnet accepts either the compact string itself or a file holding it.
std::string read_subnet_arg(const std::string& arg) {
    if (!fs::exists(arg)) return arg;
    std::ifstream in(arg, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) throw std::runtime_error("subnet file " + arg + " is empty");
    const auto last = text.find_last_not_of(" \t\r\n");
    return text.substr(first, last - first + 1);
}

SubnetConfig parse_and_validate_subnet(const std::string& arg, const SearchSpace& space) {
    const SubnetConfig cfg = parse_subnet_string(read_subnet_arg(arg));
    if (const auto err = validate_config(space, cfg)) {
        throw std::runtime_error("subnet rejected: " + *err);
    }
    return cfg;
}

LoadedCheckpoint load_for_inference(const std::string& ckpt_path) {
    LoadedCheckpoint loaded = checkpoint_load(ckpt_path);
    const ExperimentConfig cfg = parse_experiment_config(loaded.config_text);
    ensure_calibrated(loaded.state.model, calibration_image(loaded.state.model.space, cfg.data));
    return loaded;
}

int run_train(const std::string& config_path) {
    const ExperimentConfig cfg = load_experiment_config(config_path);
    fs::create_directories(cfg.output_dir);

    const Dataset train = split_dataset(cfg.data, "train", cfg.data.train_count);
    TrainerState st(cfg.space, cfg.schedule);
    const std::vector<MetricsRow> metrics = train_supernet(st, train, cfg.lora);

    const fs::path ckpt = fs::path(cfg.output_dir) / "checkpoint.bin";
    const fs::path csv = fs::path(cfg.output_dir) / "metrics.csv";
    checkpoint_save(ckpt.string(), st, cfg.raw_text);
    write_file(csv, metrics_csv(metrics));

    if (!metrics.empty()) {
        std::printf("trained %lld steps, final loss %.6f\n",
                    static_cast<long long>(st.step), metrics.back().loss);
    }
    std::printf("wrote %s\nwrote %s\n", ckpt.string().c_str(), csv.string().c_str());
    return 0;
}

int run_search(const std::string& config_path, const std::string& ckpt_path,
               std::optional<double> budget_arg) {
    const ExperimentConfig cfg = load_experiment_config(config_path);
    LoadedCheckpoint loaded = checkpoint_load(ckpt_path);
    if (loaded.config_digest != config_digest(cfg.raw_text)) {
        throw std::runtime_error("checkpoint " + ckpt_path +
                                 " was produced by a different config (digest mismatch)");
    }
    ElasticViT& model = loaded.state.model;
    ensure_calibrated(model, calibration_image(model.space, cfg.data));
    const Dataset val = split_dataset(cfg.data, "val", cfg.data.val_count);

    const double raw = budget_arg.value_or(cfg.search.budget_fraction);
    if (!(raw > 0.0)) throw std::runtime_error("budget must be positive");
    const std::int64_t ceiling = max_bitops(model.space);
    const std::int64_t budget =
        raw <= 1.0 ? static_cast<std::int64_t>(std::llround(raw * static_cast<double>(ceiling)))
                   : static_cast<std::int64_t>(std::llround(raw));

    const auto eval_fn = [&](const SubnetConfig& candidate) {
        return evaluate(model, candidate, val, cfg.search.eval_samples).loss;
    };
    Rng rng(Rng::derive_seed(cfg.schedule.seed, "search"));
    const EvolutionResult result =
        evolve_search(model.space, eval_fn, budget, cfg.search.hyper, rng);

    fs::create_directories(cfg.output_dir);
    const fs::path history = fs::path(cfg.output_dir) / "search_history.csv";
    const fs::path best = fs::path(cfg.output_dir) / "best_subnet.txt";
    write_file(history, history_csv(result.history));
    write_file(best, to_subnet_string(result.best) + "\n");

    std::printf("budget %lld of %lld BitOPs\n", static_cast<long long>(budget),
                static_cast<long long>(ceiling));
    std::printf("best subnet %s\n", to_subnet_string(result.best).c_str());
    std::printf("best loss %.6f, bitops %lld\n", result.best_loss,
                static_cast<long long>(bitops(result.best, model.space).grand_total));
    std::printf("wrote %s\nwrote %s\n", history.string().c_str(), best.string().c_str());
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& subnet_arg) {
    LoadedCheckpoint loaded = load_for_inference(ckpt_path);
    ElasticViT& model = loaded.state.model;
    const SubnetConfig subnet = parse_and_validate_subnet(subnet_arg, model.space);

    const ExperimentConfig cfg = parse_experiment_config(loaded.config_text);
    const Dataset val = split_dataset(cfg.data, "val", cfg.data.val_count);
    const EvalMetrics m = evaluate(model, subnet, val);

    std::printf("subnet %s\n", to_subnet_string(subnet).c_str());
    std::printf("loss %.6f\npixel_accuracy %.4f\nmean_iou %.4f\n", m.loss, m.pixel_accuracy,
                m.mean_iou);
    std::fputs(bitops_csv(bitops(subnet, model.space)).c_str(), stdout);
    return 0;
}

int run_export(const std::string& ckpt_path, const std::string& subnet_arg,
               const std::string& out_path) {
    LoadedCheckpoint loaded = load_for_inference(ckpt_path);
    const SubnetConfig subnet = parse_and_validate_subnet(subnet_arg, loaded.state.model.space);
    if (const fs::path parent = fs::path(out_path).parent_path(); !parent.empty()) {
        fs::create_directories(parent);
    }
    export_subnet(loaded.state.model, subnet, out_path);
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

// Pins every operator except `target` to its single largest option, so the
// sweep varies one axis at a time; non-target bits run at full precision.
SearchSpace ablated_space(const SearchSpace& full, const std::string& target) {
    SearchSpace space = full;
    if (target != "resolution") space.resolutions = {full.max_resolution()};
    if (target != "depth") {
        for (std::size_t s = 0; s < space.depth_options.size(); ++s) {
            space.depth_options[s] = {full.max_depth(static_cast<int>(s))};
        }
    }
    if (target != "mlp") {
        space.mlp_ratios = {*std::max_element(full.mlp_ratios.begin(), full.mlp_ratios.end())};
    }
    if (target != "bits") {
        space.weight_bits = {kFullBits};
        space.act_bits = {kFullBits};
    }
    return space;
}

int run_ablate(const std::string& config_path, const std::string& target) {
    const ExperimentConfig cfg = load_experiment_config(config_path);
    const SearchSpace space = ablated_space(cfg.space, target);
    TrainSchedule schedule = cfg.schedule;
    if (target != "resolution") {
        schedule.phase1_max_resolution = space.max_resolution();
        schedule.phase2_max_resolution = space.max_resolution();
    }

    const Dataset train = split_dataset(cfg.data, "train", cfg.data.train_count);
    const Dataset val = split_dataset(cfg.data, "val", cfg.data.val_count);
    TrainerState st(space, schedule);
    train_supernet(st, train, cfg.lora);
    ensure_calibrated(st.model, calibration_image(space, cfg.data));

    // Sweep a handful of random subnets plus the largest one, deduplicated.
    Rng rng(Rng::derive_seed(cfg.schedule.seed, "ablate." + target));
    std::vector<SubnetConfig> sweep = {max_config(space)};
    std::set<std::string> seen = {to_subnet_string(sweep.front())};
    for (int draws = 0; draws < 64 && static_cast<int>(sweep.size()) < 9; ++draws) {
        SubnetConfig candidate = sample_uniform(space, rng);
        if (seen.insert(to_subnet_string(candidate)).second) sweep.push_back(candidate);
    }

    std::string csv = "config,bitops,loss,pixel_accuracy,mean_iou\n";
    for (const SubnetConfig& subnet : sweep) {
        const EvalMetrics m = evaluate(st.model, subnet, val);
        char row[512];
        std::snprintf(row, sizeof(row), "\"%s\",%lld,%.17g,%.17g,%.17g\n",
                      to_subnet_string(subnet).c_str(),
                      static_cast<long long>(bitops(subnet, space).grand_total), m.loss,
                      m.pixel_accuracy, m.mean_iou);
        csv += row;
    }
    fs::create_directories(cfg.output_dir);
    const fs::path out = fs::path(cfg.output_dir) / ("ablate_" + target + ".csv");
    write_file(out, csv);
    std::printf("swept %zu subnets\nwrote %s\n", sweep.size(), out.string().c_str());
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Mixed-precision weight-sharing supernet: train, search, eval, export"};
    app.require_subcommand(1);

    std::string config_path, ckpt_path, subnet_arg, out_path, target;
    double budget = 0.0;

    CLI::App* train = app.add_subcommand("train", "Train the supernet from a config file");
    train->add_option("--config", config_path, "experiment config (JSON)")->required();

    CLI::App* search = app.add_subcommand("search", "Evolutionary search under a BitOPs budget");
    search->add_option("--config", config_path, "experiment config (JSON)")->required();
    search->add_option("--checkpoint", ckpt_path, "trained supernet checkpoint")->required();
    CLI::Option* budget_opt = search->add_option(
        "--budget", budget, "BitOPs budget; <= 1 is a fraction of the maximum, > 1 absolute");

    CLI::App* eval = app.add_subcommand("eval", "Evaluate one subnet from a checkpoint");
    eval->add_option("--checkpoint", ckpt_path, "trained supernet checkpoint")->required();
    eval->add_option("--subnet", subnet_arg, "subnet string or file containing one")->required();

    CLI::App* exp = app.add_subcommand("export", "Export one merged quantized subnet");
    exp->add_option("--checkpoint", ckpt_path, "trained supernet checkpoint")->required();
    exp->add_option("--subnet", subnet_arg, "subnet string or file containing one")->required();
    exp->add_option("--out", out_path, "output artifact path")->required();

    CLI::App* ablate = app.add_subcommand("ablate", "Train with one elastic operator and sweep it");
    ablate->add_option("--config", config_path, "experiment config (JSON)")->required();
    ablate->add_option("--operator", target, "the axis left elastic")
        ->required()
        ->check(CLI::IsMember({"resolution", "depth", "mlp", "bits"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (app.got_subcommand(train)) return run_train(config_path);
        if (app.got_subcommand(search)) {
            std::optional<double> budget_arg;
            if (budget_opt->count() > 0) budget_arg = budget;
            return run_search(config_path, ckpt_path, budget_arg);
        }
        if (app.got_subcommand(eval)) return run_eval(ckpt_path, subnet_arg);
        if (app.got_subcommand(exp)) return run_export(ckpt_path, subnet_arg, out_path);
        if (app.got_subcommand(ablate)) return run_ablate(config_path, target);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace qnas
