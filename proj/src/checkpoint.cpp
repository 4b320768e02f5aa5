// SPDX-License-Identifier: Apache-2.0
#include "qnas/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace qnas {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'Q', 'N', 'A', 'S', 'C', 'K', 'P', '1'};
constexpr int kVersion = 1;

std::string hex_digest(const void* bytes, std::size_t len) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes, len)));
    return buf;
}

json space_to_json(const SearchSpace& s) {
    return json{{"resolutions", s.resolutions},   {"depth_options", s.depth_options},
                {"mlp_ratios", s.mlp_ratios},     {"weight_bits", s.weight_bits},
                {"act_bits", s.act_bits},         {"embed_dim", s.embed_dim},
                {"patch", s.patch},               {"heads", s.heads},
                {"in_channels", s.in_channels},   {"num_classes", s.num_classes}};
}

SearchSpace space_from_json(const json& j) {
    SearchSpace s;
    s.resolutions = j.at("resolutions").get<std::vector<int>>();
    s.depth_options = j.at("depth_options").get<std::vector<std::vector<int>>>();
    s.mlp_ratios = j.at("mlp_ratios").get<std::vector<double>>();
    s.weight_bits = j.at("weight_bits").get<std::vector<int>>();
    s.act_bits = j.at("act_bits").get<std::vector<int>>();
    s.embed_dim = j.at("embed_dim").get<int>();
    s.patch = j.at("patch").get<int>();
    s.heads = j.at("heads").get<int>();
    s.in_channels = j.at("in_channels").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    return s;
}

json schedule_to_json(const TrainSchedule& s) {
    return json{{"total_steps", s.total_steps},
                {"phase1_steps", s.phase1_steps},
                {"phase1_max_resolution", s.phase1_max_resolution},
                {"phase2_max_resolution", s.phase2_max_resolution},
                {"lr", s.lr},
                {"weight_decay", s.weight_decay},
                {"batch_size", s.batch_size},
                {"subnets_per_step", s.subnets_per_step},
                {"seed", s.seed}};
}

TrainSchedule schedule_from_json(const json& j) {
    TrainSchedule s;
    s.total_steps = j.at("total_steps").get<std::int64_t>();
    s.phase1_steps = j.at("phase1_steps").get<std::int64_t>();
    s.phase1_max_resolution = j.at("phase1_max_resolution").get<int>();
    s.phase2_max_resolution = j.at("phase2_max_resolution").get<int>();
    s.lr = j.at("lr").get<float>();
    s.weight_decay = j.at("weight_decay").get<float>();
    s.batch_size = j.at("batch_size").get<int>();
    s.subnets_per_step = j.at("subnets_per_step").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

// Appends one named tensor to the payload and records it in the directory.
void put_tensor(json& directory, std::string& payload, const std::string& name, const Tensor& t) {
    directory.push_back(json{{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
    payload.append(reinterpret_cast<const char*>(t.data()),
                   static_cast<std::size_t>(t.numel()) * sizeof(float));
}

Tensor read_tensor(const json& entry, const std::string& payload) {
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t bytes = static_cast<std::size_t>(shape_numel(shape)) * sizeof(float);
    if (offset + bytes > payload.size()) {
        throw std::runtime_error("checkpoint payload truncated at tensor " +
                                 entry.at("name").get<std::string>());
    }
    Tensor t(shape);
    std::memcpy(t.data(), payload.data() + offset, bytes);
    return t;
}

} // namespace

std::string config_digest(const std::string& text) {
    return hex_digest(text.data(), text.size());
}

void checkpoint_save(const std::string& path, const TrainerState& st,
                     const std::string& config_text) {
    json manifest;
    manifest["version"] = kVersion;
    manifest["config_text"] = config_text;
    manifest["config_digest"] = config_digest(config_text);
    manifest["step"] = st.step;
    manifest["rng_state"] = st.rng.save_state();
    manifest["schedule"] = schedule_to_json(st.schedule);
    manifest["space"] = space_to_json(st.model.space);
    manifest["base_frozen"] = st.model.base_frozen;
    manifest["lora_attached"] = st.model.lora_attached;

    json directory = json::array();
    std::string payload;
    for (const std::string& name : st.model.base_param_names()) {
        put_tensor(directory, payload, name, st.model.get_param(name));
    }

    json banks = json::object();
    for (const auto& [layer, bank] : st.model.lora) {
        banks[layer] = json{{"mode", lora_mode_name(bank.mode)},
                            {"switch_key", switch_key_name(bank.switch_key)},
                            {"detach", bank.detach},
                            {"base_index", bank.base_index},
                            {"bit_groups", bank.bit_groups},
                            {"rank", bank.modules.empty() ? 0 : bank.modules[0].rank},
                            {"scaling", bank.modules.empty() ? 1.0f : bank.modules[0].scaling},
                            {"modules", bank.modules.size()}};
        for (std::size_t i = 0; i < bank.modules.size(); ++i) {
            const std::string prefix = "lora." + layer + ".m" + std::to_string(i);
            put_tensor(directory, payload, prefix + ".a", bank.modules[i].A);
            put_tensor(directory, payload, prefix + ".b", bank.modules[i].B);
        }
    }
    manifest["lora_banks"] = banks;

    json quant = json::object();
    for (const auto& [key, qp] : st.model.quantizers.entries()) {
        quant[key] = json{{"bits", qp.bits},
                          {"scale", qp.scale},
                          {"zero", qp.zero_point},
                          {"kind", qp.kind == QuantKind::weight ? "w" : "a"},
                          {"initialized", qp.initialized}};
    }
    manifest["quantizers"] = quant;

    json opt = json::object();
    for (const auto& [name, slot] : st.opt.state()) {
        opt[name] = json{{"steps", slot.steps}};
        put_tensor(directory, payload, "opt." + name + ".m", slot.m);
        put_tensor(directory, payload, "opt." + name + ".v", slot.v);
    }
    manifest["opt"] = opt;
    manifest["tensors"] = std::move(directory);
    manifest["payload_digest"] = hex_digest(payload.data(), payload.size());

    const std::string text = manifest.dump();
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    file.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = text.size();
    file.write(reinterpret_cast<const char*>(&len), sizeof(len));
    file.write(text.data(), static_cast<std::streamsize>(text.size()));
    file.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!file) throw std::runtime_error("failed writing checkpoint: " + path);
}

LoadedCheckpoint checkpoint_load(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

    if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t) ||
        std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not a checkpoint file: " + path);
    }
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + sizeof(kMagic), sizeof(len));
    const std::size_t header = sizeof(kMagic) + sizeof(std::uint64_t);
    if (header + len > bytes.size()) {
        throw std::runtime_error("checkpoint manifest truncated: " + path);
    }
    const json manifest = json::parse(bytes.substr(header, len));
    if (manifest.at("version").get<int>() != kVersion) {
        throw std::runtime_error("unsupported checkpoint version " +
                                 manifest.at("version").dump());
    }
    const std::string payload = bytes.substr(header + static_cast<std::size_t>(len));
    if (hex_digest(payload.data(), payload.size()) !=
        manifest.at("payload_digest").get<std::string>()) {
        throw std::runtime_error("checkpoint payload digest mismatch: " + path);
    }
    const std::string config_text = manifest.at("config_text").get<std::string>();
    if (config_digest(config_text) != manifest.at("config_digest").get<std::string>()) {
        throw std::runtime_error("checkpoint config digest mismatch: " + path);
    }

    std::map<std::string, json> directory;
    for (const json& entry : manifest.at("tensors")) {
        directory.emplace(entry.at("name").get<std::string>(), entry);
    }
    const auto tensor_named = [&](const std::string& name) {
        auto it = directory.find(name);
        if (it == directory.end()) {
            throw std::runtime_error("checkpoint is missing tensor " + name);
        }
        return read_tensor(it->second, payload);
    };

    const SearchSpace space = space_from_json(manifest.at("space"));
    const TrainSchedule schedule = schedule_from_json(manifest.at("schedule"));
    LoadedCheckpoint loaded{TrainerState(space, schedule), config_text,
                            manifest.at("config_digest").get<std::string>()};
    TrainerState& st = loaded.state;
    st.step = manifest.at("step").get<std::int64_t>();
    st.rng.load_state(manifest.at("rng_state").get<std::string>());
    st.model.base_frozen = manifest.at("base_frozen").get<bool>();
    st.model.lora_attached = manifest.at("lora_attached").get<bool>();

    for (const std::string& name : st.model.base_param_names()) {
        st.model.set_param(name, tensor_named(name));
    }

    st.model.lora.clear();
    for (const auto& [layer, bj] : manifest.at("lora_banks").items()) {
        MultiplexBank bank;
        bank.mode = parse_lora_mode(bj.at("mode").get<std::string>());
        bank.switch_key = parse_switch_key(bj.at("switch_key").get<std::string>());
        bank.detach = bj.at("detach").get<bool>();
        bank.base_index = bj.at("base_index").get<int>();
        bank.bit_groups = bj.at("bit_groups").get<std::vector<std::vector<int>>>();
        const std::size_t modules = bj.at("modules").get<std::size_t>();
        const int rank = bj.at("rank").get<int>();
        const float scaling = bj.at("scaling").get<float>();
        for (std::size_t i = 0; i < modules; ++i) {
            const std::string prefix = "lora." + layer + ".m" + std::to_string(i);
            LoRAModule mod;
            mod.A = tensor_named(prefix + ".a");
            mod.B = tensor_named(prefix + ".b");
            mod.rank = rank;
            mod.scaling = scaling;
            bank.modules.push_back(std::move(mod));
        }
        st.model.lora.emplace(layer, std::move(bank));
    }

    st.model.quantizers.entries().clear();
    for (const auto& [key, qj] : manifest.at("quantizers").items()) {
        QuantizerParams qp;
        qp.bits = qj.at("bits").get<int>();
        qp.scale = qj.at("scale").get<float>();
        qp.zero_point = qj.at("zero").get<float>();
        qp.kind = qj.at("kind").get<std::string>() == "w" ? QuantKind::weight
                                                          : QuantKind::activation;
        qp.initialized = qj.at("initialized").get<bool>();
        st.model.quantizers.entries().emplace(key, qp);
    }

    st.opt.state().clear();
    for (const auto& [name, oj] : manifest.at("opt").items()) {
        AdamW::Slot slot;
        slot.steps = oj.at("steps").get<std::int64_t>();
        slot.m = tensor_named("opt." + name + ".m");
        slot.v = tensor_named("opt." + name + ".v");
        st.opt.state().emplace(name, std::move(slot));
    }
    return loaded;
}

} // namespace qnas
