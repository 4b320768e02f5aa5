// SPDX-License-Identifier: Apache-2.0
#include "qnas/trainkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "qnas/cost.hpp"
#include "qnas/kernels.hpp"

namespace qnas {

void TrainSchedule::validate() const {
    if (total_steps < 0 || phase1_steps < 0 || phase1_steps > total_steps) {
        throw std::invalid_argument("schedule: need 0 <= phase-1 steps <= total steps");
    }
    if (phase2_max_resolution < phase1_max_resolution) {
        throw std::invalid_argument("schedule: phase-2 resolution cap below phase-1 cap");
    }
    if (batch_size < 1) throw std::invalid_argument("schedule: batch size must be positive");
    if (subnets_per_step < 1) throw std::invalid_argument("schedule: subnets per step must be positive");
    if (!(lr > 0.0f) || weight_decay < 0.0f) {
        throw std::invalid_argument("schedule: learning rate must be positive, decay non-negative");
    }
}

namespace {

AdamWConfig optimizer_config(const TrainSchedule& sched) {
    AdamWConfig cfg;
    cfg.lr = sched.lr;
    cfg.weight_decay = sched.weight_decay;
    return cfg;
}

} // namespace

TrainerState::TrainerState(const SearchSpace& space, const TrainSchedule& sched)
    : model(space, Rng::derive_seed(sched.seed, "model-init")),
      opt(optimizer_config(sched)),
      rng(Rng::derive_seed(sched.seed, "train.loop")),
      schedule(sched) {
    sched.validate();
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string out = "step,phase,config,loss,lr\n";
    char line[512];
    for (const MetricsRow& row : rows) {
        std::snprintf(line, sizeof(line), "%lld,%d,\"%s\",%.17g,%.9g\n",
                      static_cast<long long>(row.step), row.phase, row.config.c_str(), row.loss,
                      static_cast<double>(row.lr));
        out += line;
    }
    return out;
}

std::vector<MetricsRow> train_supernet(TrainerState& st, const Dataset& train,
                                       const LoraSettings& lora, std::int64_t run_steps) {
    st.schedule.validate();
    if (train.samples.empty()) throw std::invalid_argument("training set is empty");
    const TrainSchedule& sched = st.schedule;
    const std::int64_t stop =
        run_steps < 0 ? sched.total_steps
                      : std::min<std::int64_t>(sched.total_steps, st.step + run_steps);

    std::vector<MetricsRow> metrics;
    for (; st.step < stop; ++st.step) {
        const int phase = st.step < sched.phase1_steps ? 1 : 2;
        if (phase == 2 && !st.model.lora_attached) {
            st.model.attach_lora(lora, Rng::derive_seed(sched.seed, "lora-attach"));
            st.model.freeze_base();
        }
        const int res_cap =
            phase == 1 ? sched.phase1_max_resolution : sched.phase2_max_resolution;

        std::vector<const SyntheticSample*> batch;
        for (int i = 0; i < sched.batch_size; ++i) {
            batch.push_back(
                &train.samples[static_cast<std::size_t>(st.rng.uniform_int(
                    static_cast<int>(train.samples.size())))]);
        }

        std::map<std::string, Tensor> values;
        std::map<std::string, Tensor> grads;
        double loss_sum = 0.0;
        std::string config_names;
        for (int k = 0; k < sched.subnets_per_step; ++k) {
            const SubnetConfig cfg = sample_uniform(st.model.space, st.rng, res_cap);
            if (!config_names.empty()) config_names += '|';
            config_names += to_subnet_string(cfg);

            Graph g;
            std::vector<Tensor> images;
            std::vector<std::vector<int>> labels;
            for (const SyntheticSample* s : batch) {
                SyntheticSample scaled = downscale_sample(*s, train.resolution, cfg.resolution);
                images.push_back(std::move(scaled.image));
                labels.push_back(std::move(scaled.labels));
            }
            ForwardOutput out = configure_and_forward(st.model, g, cfg, images);
            Var loss = g.mean_cross_entropy(out.logits[0], labels[0]);
            for (std::size_t i = 1; i < out.logits.size(); ++i) {
                loss = g.add(loss, g.mean_cross_entropy(out.logits[i], labels[i]));
            }
            loss = g.scale(loss, 1.0f / static_cast<float>(images.size()));

            const double loss_value = static_cast<double>(loss.value()[0]);
            if (!std::isfinite(loss_value)) {
                throw std::runtime_error("non-finite loss at step " + std::to_string(st.step));
            }
            loss_sum += loss_value;

            g.backward(loss);
            for (const auto& [name, var] : out.params) {
                auto it = grads.find(name);
                if (it == grads.end()) {
                    values.emplace(name, var.value());
                    grads.emplace(name, var.grad());
                } else {
                    it->second = k_add(it->second, var.grad());
                }
            }
        }

        const float inv = 1.0f / static_cast<float>(sched.subnets_per_step);
        for (const auto& [name, grad] : grads) {
            st.model.set_param(name, st.opt.step(name, values.at(name), k_scale(grad, inv)));
        }

        MetricsRow row;
        row.step = st.step;
        row.phase = phase;
        row.config = config_names;
        row.loss = loss_sum / sched.subnets_per_step;
        row.lr = sched.lr;
        metrics.push_back(std::move(row));
    }
    return metrics;
}

EvalMetrics evaluate(ElasticViT& model, const SubnetConfig& cfg, const Dataset& val,
                     int max_samples) {
    if (val.samples.empty()) throw std::invalid_argument("validation set is empty");
    const std::size_t n = max_samples > 0
        ? std::min<std::size_t>(static_cast<std::size_t>(max_samples), val.samples.size())
        : val.samples.size();

    const int classes = model.space.num_classes;
    double loss_sum = 0.0;
    std::int64_t correct = 0, total = 0;
    std::vector<std::int64_t> inter(static_cast<std::size_t>(classes), 0);
    std::vector<std::int64_t> uni(static_cast<std::size_t>(classes), 0);

    for (std::size_t i = 0; i < n; ++i) {
        SyntheticSample s = downscale_sample(val.samples[i], val.resolution, cfg.resolution);
        Graph g;
        ForwardOutput out = configure_and_forward(model, g, cfg, {s.image});
        const Tensor logits = out.logits[0].value();

        const std::vector<double> ce = k_cross_entropy_rows(logits, s.labels);
        double image_loss = 0.0;
        for (double v : ce) image_loss += v;
        loss_sum += image_loss / static_cast<double>(ce.size());

        for (std::size_t px = 0; px < s.labels.size(); ++px) {
            int arg = 0;
            for (int c = 1; c < classes; ++c) {
                if (logits.at(static_cast<int>(px), c) > logits.at(static_cast<int>(px), arg)) {
                    arg = c;
                }
            }
            const int truth = s.labels[px];
            correct += arg == truth ? 1 : 0;
            total += 1;
            if (arg == truth) {
                inter[static_cast<std::size_t>(truth)] += 1;
                uni[static_cast<std::size_t>(truth)] += 1;
            } else {
                uni[static_cast<std::size_t>(truth)] += 1;
                uni[static_cast<std::size_t>(arg)] += 1;
            }
        }
    }

    EvalMetrics m;
    m.loss = loss_sum / static_cast<double>(n);
    m.pixel_accuracy = static_cast<double>(correct) / static_cast<double>(total);
    double iou_sum = 0.0;
    int iou_classes = 0;
    for (int c = 0; c < classes; ++c) {
        if (uni[static_cast<std::size_t>(c)] > 0) {
            iou_sum += static_cast<double>(inter[static_cast<std::size_t>(c)]) /
                       static_cast<double>(uni[static_cast<std::size_t>(c)]);
            iou_classes += 1;
        }
    }
    m.mean_iou = iou_classes > 0 ? iou_sum / iou_classes : 1.0;
    return m;
}

} // namespace qnas
