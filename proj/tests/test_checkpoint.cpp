// SPDX-License-Identifier: Apache-2.0
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "qnas/checkpoint.hpp"
#include "qnas/data.hpp"
#include "testutil.hpp"

using namespace qnas;

namespace {

SearchSpace small_space() {
    SearchSpace space;
    space.resolutions = {32};
    space.depth_options = {{1}};
    space.mlp_ratios = {2.0};
    space.weight_bits = {4, 8};
    space.act_bits = {8};
    space.embed_dim = 32;
    space.patch = 8;
    space.heads = 4;
    return space;
}

TrainSchedule small_schedule(std::int64_t total, std::int64_t phase1) {
    TrainSchedule sched;
    sched.total_steps = total;
    sched.phase1_steps = phase1;
    sched.phase1_max_resolution = 32;
    sched.phase2_max_resolution = 32;
    sched.batch_size = 2;
    sched.seed = 11;
    return sched;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

std::vector<char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_CASE("save then load restores every array bitwise") {
    Dataset data = gen_synthetic("shapes-seg", 6, 32, 20);
    TrainerState st(small_space(), small_schedule(6, 3));
    train_supernet(st, data, LoraSettings{});
    REQUIRE(st.model.lora_attached);

    const std::string config_text = "{\"demo\": true, \"note\": \"round trip\"}";
    const auto path = temp_file("qnas_ckpt_roundtrip.bin");
    checkpoint_save(path.string(), st, config_text);
    LoadedCheckpoint loaded = checkpoint_load(path.string());

    CHECK(loaded.config_text == config_text);
    CHECK(loaded.config_digest == config_digest(config_text));
    TrainerState& re = loaded.state;
    CHECK(re.step == st.step);
    CHECK(re.model.base_frozen == st.model.base_frozen);
    CHECK(re.model.lora_attached == st.model.lora_attached);
    CHECK(re.rng.save_state() == st.rng.save_state());
    CHECK(re.schedule.total_steps == st.schedule.total_steps);
    CHECK(re.schedule.phase1_steps == st.schedule.phase1_steps);
    CHECK(re.schedule.seed == st.schedule.seed);
    CHECK(re.model.space.resolutions == st.model.space.resolutions);
    CHECK(re.model.space.depth_options == st.model.space.depth_options);
    CHECK(re.model.space.mlp_ratios == st.model.space.mlp_ratios);
    CHECK(re.model.space.weight_bits == st.model.space.weight_bits);
    CHECK(re.model.space.act_bits == st.model.space.act_bits);
    CHECK(re.model.space.embed_dim == st.model.space.embed_dim);

    const auto names = st.model.all_param_names();
    CHECK(re.model.all_param_names() == names);
    for (const std::string& name : names) {
        CHECK(re.model.get_param(name).vec() == st.model.get_param(name).vec());
    }
    for (const auto& [key, q] : st.model.quantizers.entries()) {
        REQUIRE(re.model.quantizers.entries().count(key) == 1);
        const QuantizerParams& rq = re.model.quantizers.entries().at(key);
        CHECK(rq.scale == q.scale);
        CHECK(rq.zero_point == q.zero_point);
        CHECK(rq.bits == q.bits);
        CHECK(rq.initialized == q.initialized);
    }
    for (const auto& [name, slot] : st.opt.state()) {
        REQUIRE(re.opt.state().count(name) == 1);
        const auto& rs = re.opt.state().at(name);
        CHECK(rs.steps == slot.steps);
        CHECK(rs.m.vec() == slot.m.vec());
        CHECK(rs.v.vec() == slot.v.vec());
    }
    std::filesystem::remove(path);
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
    Dataset data = gen_synthetic("shapes-seg", 6, 32, 21);
    const TrainSchedule sched = small_schedule(10, 5);

    TrainerState straight(small_space(), sched);
    const auto metrics_straight = train_supernet(straight, data, LoraSettings{});

    TrainerState first(small_space(), sched);
    auto metrics_split = train_supernet(first, data, LoraSettings{}, 5);
    const auto path = temp_file("qnas_ckpt_resume.bin");
    checkpoint_save(path.string(), first, "{}");
    LoadedCheckpoint loaded = checkpoint_load(path.string());
    const auto metrics_tail = train_supernet(loaded.state, data, LoraSettings{});
    metrics_split.insert(metrics_split.end(), metrics_tail.begin(), metrics_tail.end());

    REQUIRE(metrics_straight.size() == metrics_split.size());
    for (std::size_t i = 0; i < metrics_straight.size(); ++i) {
        CHECK(metrics_straight[i].config == metrics_split[i].config);
        CHECK(metrics_straight[i].loss == metrics_split[i].loss);
    }
    for (const std::string& name : straight.model.all_param_names()) {
        CHECK(loaded.state.model.get_param(name).vec() == straight.model.get_param(name).vec());
    }
    CHECK(loaded.state.rng.save_state() == straight.rng.save_state());
    std::filesystem::remove(path);
}

TEST_CASE("tampered payload bytes are rejected") {
    Dataset data = gen_synthetic("shapes-seg", 2, 32, 22);
    TrainerState st(small_space(), small_schedule(2, 1));
    train_supernet(st, data, LoraSettings{});
    const auto path = temp_file("qnas_ckpt_tamper_payload.bin");
    checkpoint_save(path.string(), st, "{}");

    std::vector<char> bytes = slurp(path);
    bytes.back() = static_cast<char>(bytes.back() ^ 0x1);
    spit(path, bytes);
    CHECK_THROWS_WITH_AS(checkpoint_load(path.string()), doctest::Contains("payload digest"),
                         std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("tampered config text is rejected by the config digest") {
    Dataset data = gen_synthetic("shapes-seg", 2, 32, 23);
    TrainerState st(small_space(), small_schedule(2, 1));
    train_supernet(st, data, LoraSettings{});
    const std::string marker(64, 'x');
    const auto path = temp_file("qnas_ckpt_tamper_config.bin");
    checkpoint_save(path.string(), st, "{\"pad\": \"" + marker + "\"}");

    std::vector<char> bytes = slurp(path);
    const std::string haystack(bytes.begin(), bytes.end());
    const std::size_t pos = haystack.find(marker);
    REQUIRE(pos != std::string::npos);
    bytes[pos] = 'y';
    spit(path, bytes);
    CHECK_THROWS_WITH_AS(checkpoint_load(path.string()), doctest::Contains("config digest"),
                         std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("wrong magic and missing files raise clear errors") {
    const auto path = temp_file("qnas_ckpt_not_a_checkpoint.bin");
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "definitely not a checkpoint, far too short on magic";
    }
    CHECK_THROWS_AS(checkpoint_load(path.string()), std::runtime_error);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(checkpoint_load((temp_file("qnas_ckpt_missing.bin")).string()),
                    std::runtime_error);
}

TEST_CASE("the config digest is a stable 16-digit hex fingerprint") {
    const std::string digest = config_digest("abc");
    CHECK(digest.size() == 16);
    CHECK(digest == config_digest("abc"));
    CHECK(digest != config_digest("abd"));
    for (char c : digest) CHECK(std::isxdigit(static_cast<unsigned char>(c)));
}
