// SPDX-License-Identifier: Apache-2.0
#include "qnas/export.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "qnas/kernels.hpp"
#include "qnas/rng.hpp"

namespace qnas {

static_assert(std::endian::native == std::endian::little,
              "exported payloads are little-endian");

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'Q', 'N', 'A', 'S', 'E', 'X', 'P', '1'};
constexpr int kVersion = 1;
constexpr float kLnEps = 1e-5f;

std::string hex_digest(const void* bytes, std::size_t len) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes, len)));
    return buf;
}

std::size_t put_floats(std::string& payload, const Tensor& t) {
    const std::size_t offset = payload.size();
    payload.append(reinterpret_cast<const char*>(t.data()),
                   static_cast<std::size_t>(t.numel()) * sizeof(float));
    return offset;
}

std::size_t put_codes(std::string& payload, const std::vector<std::int32_t>& codes) {
    const std::size_t offset = payload.size();
    payload.append(reinterpret_cast<const char*>(codes.data()), codes.size() * sizeof(std::int32_t));
    return offset;
}

Tensor read_floats(const std::string& payload, std::size_t offset, const std::vector<int>& shape) {
    const std::size_t bytes = static_cast<std::size_t>(shape_numel(shape)) * sizeof(float);
    if (offset + bytes > payload.size()) {
        throw std::runtime_error("exported payload truncated");
    }
    Tensor t(shape);
    std::memcpy(t.data(), payload.data() + offset, bytes);
    return t;
}

std::vector<std::int32_t> read_codes(const std::string& payload, std::size_t offset,
                                     std::size_t count) {
    const std::size_t bytes = count * sizeof(std::int32_t);
    if (offset + bytes > payload.size()) {
        throw std::runtime_error("exported payload truncated");
    }
    std::vector<std::int32_t> codes(count);
    std::memcpy(codes.data(), payload.data() + offset, bytes);
    return codes;
}

// Leading/offset column and row windows of a row-major matrix.
Tensor cols_window(const Tensor& t, int start, int count) {
    Tensor out({t.dim(0), count});
    for (int r = 0; r < t.dim(0); ++r) {
        for (int c = 0; c < count; ++c) out.at(r, c) = t.at(r, start + c);
    }
    return out;
}

Tensor reshaped(const Tensor& t, std::vector<int> shape) {
    return Tensor(std::move(shape), t.vec());
}

} // namespace

void export_subnet(const ElasticViT& model, const SubnetConfig& cfg, const std::string& path) {
    const std::vector<MergedLayer> layers = merged_layers(model, cfg);

    json manifest;
    manifest["version"] = kVersion;
    manifest["config"] = to_subnet_string(cfg);
    manifest["dims"] = json{{"embed_dim", model.space.embed_dim},
                            {"patch", model.space.patch},
                            {"heads", model.space.heads},
                            {"in_channels", model.space.in_channels},
                            {"num_classes", model.space.num_classes}};

    std::string payload;
    json layer_list = json::array();
    for (const MergedLayer& layer : layers) {
        json entry{{"name", layer.name},
                   {"w_bits", layer.w_bits},
                   {"a_bits", layer.a_bits},
                   {"shape", layer.weight.shape()}};
        if (layer.w_bits == kFullBits) {
            entry["offset"] = put_floats(payload, layer.weight);
        } else {
            entry["offset"] = put_codes(payload, quantize_codes(layer.weight, layer.wq));
            entry["wq"] = json{{"scale", layer.wq.scale}, {"zero", layer.wq.zero_point}};
        }
        if (layer.a_bits != kFullBits) {
            entry["aq"] = json{{"scale", layer.aq.scale}, {"zero", layer.aq.zero_point}};
        }
        layer_list.push_back(std::move(entry));
    }
    manifest["layers"] = std::move(layer_list);

    // Structural tensors the reloader needs verbatim: the positional grid at
    // the subnet's resolution, the active blocks' layernorm affines, and the
    // statically quantized head.
    json extra_list = json::array();
    const auto put_extra = [&](const std::string& name, const Tensor& t) {
        extra_list.push_back(
            json{{"name", name}, {"shape", t.shape()}, {"offset", put_floats(payload, t)}});
    };
    put_extra("pos", interpolate_pos_embed(model, cfg.resolution));
    for (std::size_t s = 0; s < cfg.depths.size(); ++s) {
        for (int b = 0; b < cfg.depths[s]; ++b) {
            const std::string prefix = "s" + std::to_string(s) + ".b" + std::to_string(b);
            const BlockWeights& w = model.blocks[s][static_cast<std::size_t>(b)];
            put_extra(prefix + ".ln1.g", w.ln1_g);
            put_extra(prefix + ".ln1.b", w.ln1_b);
            put_extra(prefix + ".ln2.g", w.ln2_g);
            put_extra(prefix + ".ln2.b", w.ln2_b);
        }
    }

    const Tensor& head = model.head_w;
    json head_entry{{"name", "head"}, {"shape", head.shape()}};
    if (head.max_value() > head.min_value()) {
        // Mirror the double-precision arithmetic of the static min/max head
        // quantizer so the exported codes match its output exactly.
        const double lo = static_cast<double>(head.min_value());
        const double hi = static_cast<double>(head.max_value());
        const double p = 255.0;
        const double scale = (hi - lo) / p;
        const double z = std::clamp(round_half_even(-lo / scale), 0.0, p);
        std::vector<std::int32_t> hcodes(static_cast<std::size_t>(head.numel()));
        for (int64_t i = 0; i < head.numel(); ++i) {
            const double t = static_cast<double>(head[i]) / scale + z;
            hcodes[static_cast<std::size_t>(i)] =
                static_cast<std::int32_t>(std::clamp(round_half_even(t), 0.0, p));
        }
        head_entry["w_bits"] = 8;
        head_entry["wq"] =
            json{{"scale", static_cast<float>(scale)}, {"zero", static_cast<float>(z)}};
        head_entry["offset"] = put_codes(payload, hcodes);
    } else {
        head_entry["w_bits"] = kFullBits;
        head_entry["offset"] = put_floats(payload, head);
    }
    manifest["head"] = std::move(head_entry);
    manifest["extras"] = std::move(extra_list);
    manifest["payload_digest"] = hex_digest(payload.data(), payload.size());

    const std::string text = manifest.dump();
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("cannot open export for writing: " + path);
    file.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = text.size();
    file.write(reinterpret_cast<const char*>(&len), sizeof(len));
    file.write(text.data(), static_cast<std::streamsize>(text.size()));
    file.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!file) throw std::runtime_error("failed writing export: " + path);
}

ExportedSubnet load_exported(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot open export: " + path);
    std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t) ||
        std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not an exported subnet file: " + path);
    }
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + sizeof(kMagic), sizeof(len));
    const std::size_t header = sizeof(kMagic) + sizeof(std::uint64_t);
    if (header + len > bytes.size()) {
        throw std::runtime_error("exported manifest truncated: " + path);
    }
    const json manifest = json::parse(bytes.substr(header, len));
    if (manifest.at("version").get<int>() != kVersion) {
        throw std::runtime_error("unsupported export version " + manifest.at("version").dump());
    }
    const std::string payload = bytes.substr(header + static_cast<std::size_t>(len));
    if (hex_digest(payload.data(), payload.size()) !=
        manifest.at("payload_digest").get<std::string>()) {
        throw std::runtime_error("exported payload digest mismatch: " + path);
    }

    ExportedSubnet sub;
    sub.cfg = parse_subnet_string(manifest.at("config").get<std::string>());
    const json& dims = manifest.at("dims");
    sub.embed_dim = dims.at("embed_dim").get<int>();
    sub.patch = dims.at("patch").get<int>();
    sub.heads = dims.at("heads").get<int>();
    sub.in_channels = dims.at("in_channels").get<int>();
    sub.num_classes = dims.at("num_classes").get<int>();

    const auto read_weight = [&](const json& entry, QuantKind kind) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        const std::size_t offset = entry.at("offset").get<std::size_t>();
        const int w_bits = entry.at("w_bits").get<int>();
        sub.weight_bits[name] = w_bits;
        if (w_bits == kFullBits) {
            sub.weights[name] = read_floats(payload, offset, shape);
            return;
        }
        QuantizerParams wq;
        wq.bits = w_bits;
        wq.kind = kind;
        wq.scale = entry.at("wq").at("scale").get<float>();
        wq.zero_point = entry.at("wq").at("zero").get<float>();
        wq.initialized = true;
        std::vector<std::int32_t> codes =
            read_codes(payload, offset, static_cast<std::size_t>(shape_numel(shape)));
        for (std::int32_t c : codes) {
            if (c < 0 || c > wq.p()) {
                throw std::runtime_error("exported code out of range for " + name);
            }
        }
        sub.weights[name] = dequantize_codes(codes, shape, wq);
        sub.codes[name] = std::move(codes);
    };

    for (const json& entry : manifest.at("layers")) {
        read_weight(entry, QuantKind::weight);
        const std::string name = entry.at("name").get<std::string>();
        const int a_bits = entry.at("a_bits").get<int>();
        if (a_bits != kFullBits) {
            QuantizerParams aq;
            aq.bits = a_bits;
            aq.kind = QuantKind::activation;
            aq.scale = entry.at("aq").at("scale").get<float>();
            aq.zero_point = entry.at("aq").at("zero").get<float>();
            aq.initialized = true;
            sub.act_q[name] = aq;
        }
    }
    read_weight(manifest.at("head"), QuantKind::weight);
    sub.extras["head"] = sub.weights.at("head");
    sub.weights.erase("head");

    for (const json& entry : manifest.at("extras")) {
        sub.extras[entry.at("name").get<std::string>()] =
            read_floats(payload, entry.at("offset").get<std::size_t>(),
                        entry.at("shape").get<std::vector<int>>());
    }
    return sub;
}

Tensor exported_forward(const ExportedSubnet& sub, const Tensor& image) {
    const int res = sub.cfg.resolution;
    if (image.shape() != std::vector<int>{res, res, sub.in_channels}) {
        throw std::invalid_argument("exported_forward: image shape " + shape_str(image.shape()) +
                                    " does not match resolution " + std::to_string(res));
    }
    const auto quantized_linear = [&](const std::string& layer, const Tensor& x) {
        Tensor xin = x;
        auto aq = sub.act_q.find(layer);
        if (aq != sub.act_q.end()) xin = fake_quantize(xin, aq->second);
        return k_linear(xin, sub.weights.at(layer));
    };

    Tensor x = k_patchify(image, sub.patch);
    x = quantized_linear("patch", x);
    const int tside = res / sub.patch;
    const Tensor& pos = sub.extras.at("pos");
    x = k_add(x, reshaped(pos, {tside * tside, sub.embed_dim}));

    const int hd = sub.embed_dim / sub.heads;
    std::size_t flat = 0;
    for (std::size_t s = 0; s < sub.cfg.depths.size(); ++s) {
        for (int b = 0; b < sub.cfg.depths[s]; ++b, ++flat) {
            const std::string prefix = "s" + std::to_string(s) + ".b" + std::to_string(b);
            Tensor h = k_layernorm_rows(x, kLnEps);
            h = k_mul_rowvec(h, sub.extras.at(prefix + ".ln1.g"));
            h = k_add_rowvec(h, sub.extras.at(prefix + ".ln1.b"));
            const Tensor q = quantized_linear(prefix + ".attn.q", h);
            const Tensor k = quantized_linear(prefix + ".attn.k", h);
            const Tensor v = quantized_linear(prefix + ".attn.v", h);

            Tensor attn({q.dim(0), sub.embed_dim});
            for (int i = 0; i < sub.heads; ++i) {
                const Tensor qh = cols_window(q, i * hd, hd);
                const Tensor kh = cols_window(k, i * hd, hd);
                const Tensor vh = cols_window(v, i * hd, hd);
                Tensor scores = k_scale(k_matmul(qh, k_transpose(kh)),
                                        1.0f / std::sqrt(static_cast<float>(hd)));
                const Tensor head = k_matmul(k_softmax_rows(scores), vh);
                for (int r = 0; r < head.dim(0); ++r) {
                    for (int c = 0; c < hd; ++c) attn.at(r, i * hd + c) = head.at(r, c);
                }
            }
            x = k_add(x, quantized_linear(prefix + ".attn.o", attn));

            Tensor h2 = k_layernorm_rows(x, kLnEps);
            h2 = k_mul_rowvec(h2, sub.extras.at(prefix + ".ln2.g"));
            h2 = k_add_rowvec(h2, sub.extras.at(prefix + ".ln2.b"));
            Tensor u = quantized_linear(prefix + ".fc1", h2);
            u = k_gelu(u);
            u = quantized_linear(prefix + ".fc2", u);
            x = k_add(x, u);
        }
    }

    Tensor logits = k_linear(x, sub.extras.at("head"));
    logits = reshaped(logits, {tside, tside, sub.num_classes});
    logits = k_bilinear_resize(logits, res, res);
    return reshaped(logits, {res * res, sub.num_classes});
}

} // namespace qnas
