// SPDX-License-Identifier: Apache-2.0
#include "qnas/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "qnas/kernels.hpp"
#include "qnas/rng.hpp"

namespace qnas {

namespace {

constexpr float kLnEps = 1e-5f;
constexpr float kInitStd = 0.02f;
constexpr float kMinScale = 1e-8f;

Tensor gaussian_init(std::vector<int> shape, std::uint64_t seed) {
    Tensor t(std::move(shape));
    Rng rng(seed);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0f, kInitStd);
    return t;
}

Tensor take_rows(const Tensor& t, int count) {
    Tensor out({count, t.dim(1)});
    std::copy(t.data(), t.data() + out.numel(), out.data());
    return out;
}

Tensor take_cols(const Tensor& t, int count) {
    Tensor out({t.dim(0), count});
    for (int r = 0; r < t.dim(0); ++r)
        for (int c = 0; c < count; ++c) out.at(r, c) = t.at(r, c);
    return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Tensor scalar1(float v) { return Tensor({1}, {v}); }

// Memoizes graph leaves per parameter name so every use in a batch shares
// one node, and records the trainable ones for the optimizer.
struct Session {
    Graph& g;
    ElasticViT& m;
    std::map<std::string, Var> trainable;
    std::map<std::string, Var> frozen;

    Var param(const std::string& name, const Tensor& value, bool can_train) {
        auto& pool = can_train ? trainable : frozen;
        auto it = pool.find(name);
        if (it != pool.end()) return it->second;
        Var v = can_train ? g.leaf(value, true) : g.constant(value);
        pool.emplace(name, v);
        return v;
    }
};

QuantizerParams& calibrated(QuantizerBank& bank, const std::string& layer, QuantKind kind,
                            int bits, const Tensor& reference) {
    if (!bank.contains(layer, kind, bits)) {
        bank.ensure(layer, kind, bits) =
            init_quantizer(reference.min_value(), reference.max_value(), bits, kind);
    }
    return bank.at(layer, kind, bits);
}

Var quantize_activation(Session& ss, Var x, const std::string& layer, int bits) {
    if (bits == kFullBits) return x;
    const QuantizerParams& qp =
        calibrated(ss.m.quantizers, layer, QuantKind::activation, bits, x.value());
    const std::string base = "q." + layer + ".a" + std::to_string(bits);
    Var scale = ss.param(base + ".scale", scalar1(qp.scale), true);
    Var zero = ss.param(base + ".zero", scalar1(qp.zero_point), true);
    return fake_quantize_op(ss.g, x, scale, zero, bits, QuantKind::activation);
}

enum class Slice { none, rows, cols };

// One quantized linear. Slicing realizes MLP elasticity on the shared
// storage; adapters are sliced on the matching factor so gradients land in
// the leading region of the full tensors.
Var quantized_linear(Session& ss, Var x, const std::string& layer, const Tensor& w_full,
                     const BitPair& bits, Slice slice, int count) {
    ElasticViT& m = ss.m;
    x = quantize_activation(ss, x, layer, bits.a);

    Tensor w0 = w_full;
    if (slice == Slice::rows) w0 = take_rows(w_full, count);
    if (slice == Slice::cols) w0 = take_cols(w_full, count);

    if (m.lora_attached && ElasticViT::is_attach_point(layer)) {
        MultiplexBank& bank = m.lora.at(layer);
        MultiplexBank view = bank;
        for (auto& mod : view.modules) {
            if (slice == Slice::rows) mod.B = take_rows(mod.B, count);
            if (slice == Slice::cols) mod.A = take_cols(mod.A, count);
        }
        QuantizerParams q;
        if (bits.w != kFullBits) {
            const Tensor fused = k_add(w0, lora_delta(view, bits));
            q = calibrated(m.quantizers, layer, QuantKind::weight, bits.w, fused);
        }
        std::map<int, LoraModuleVars> vars;
        for (int idx : trainable_modules(bank, bits)) {
            const std::string mp = "lora." + layer + ".m" + std::to_string(idx);
            Var a = ss.param(mp + ".a", bank.modules[idx].A, true);
            Var b = ss.param(mp + ".b", bank.modules[idx].B, true);
            if (slice == Slice::rows) b = ss.g.slice_rows(b, 0, count);
            if (slice == Slice::cols) a = ss.g.slice_cols(a, 0, count);
            vars.emplace(idx, LoraModuleVars{a, b});
        }
        return qalora_forward(ss.g, x, w0, view, vars, bits, q);
    }

    Var w = ss.param("base." + layer + ".w", w_full, !m.base_frozen);
    if (slice == Slice::rows) w = ss.g.slice_rows(w, 0, count);
    if (slice == Slice::cols) w = ss.g.slice_cols(w, 0, count);
    if (bits.w != kFullBits) {
        const QuantizerParams& qp = calibrated(m.quantizers, layer, QuantKind::weight, bits.w, w0);
        Var scale = ss.param("q." + layer + ".w" + std::to_string(bits.w) + ".scale",
                             scalar1(qp.scale), true);
        Var zero = ss.g.constant(scalar1(qp.zero_point));
        w = fake_quantize_op(ss.g, w, scale, zero, bits.w, QuantKind::weight);
    }
    return ss.g.linear(x, w);
}

Var encoder_block(Session& ss, Var x, int stage, int block, const BitPair& bits, double ratio) {
    ElasticViT& m = ss.m;
    const std::string prefix = "s" + std::to_string(stage) + ".b" + std::to_string(block);
    const std::string bp = "base." + prefix + ".";
    BlockWeights& w = m.blocks[stage][block];
    const bool bt = !m.base_frozen;

    Var h = ss.g.layernorm_rows(x, kLnEps);
    h = ss.g.mul_rowvec(h, ss.param(bp + "ln1.g", w.ln1_g, bt));
    h = ss.g.add_rowvec(h, ss.param(bp + "ln1.b", w.ln1_b, bt));
    Var q = quantized_linear(ss, h, prefix + ".attn.q", w.q, bits, Slice::none, 0);
    Var k = quantized_linear(ss, h, prefix + ".attn.k", w.k, bits, Slice::none, 0);
    Var v = quantized_linear(ss, h, prefix + ".attn.v", w.v, bits, Slice::none, 0);

    const int hd = m.head_dim();
    std::vector<Var> heads;
    for (int i = 0; i < m.space.heads; ++i) {
        Var qh = ss.g.slice_cols(q, i * hd, hd);
        Var kh = ss.g.slice_cols(k, i * hd, hd);
        Var vh = ss.g.slice_cols(v, i * hd, hd);
        Var scores = ss.g.scale(ss.g.matmul(qh, ss.g.transpose(kh)),
                                1.0f / std::sqrt(static_cast<float>(hd)));
        heads.push_back(ss.g.matmul(ss.g.softmax_rows(scores), vh));
    }
    Var attn = ss.g.concat_cols(heads);
    x = ss.g.add(x, quantized_linear(ss, attn, prefix + ".attn.o", w.o, bits, Slice::none, 0));

    Var h2 = ss.g.layernorm_rows(x, kLnEps);
    h2 = ss.g.mul_rowvec(h2, ss.param(bp + "ln2.g", w.ln2_g, bt));
    h2 = ss.g.add_rowvec(h2, ss.param(bp + "ln2.b", w.ln2_b, bt));
    const int hidden = static_cast<int>(std::ceil(ratio * m.space.embed_dim));
    Var u = quantized_linear(ss, h2, prefix + ".fc1", w.fc1, bits, Slice::rows, hidden);
    u = ss.g.gelu(u);
    u = quantized_linear(ss, u, prefix + ".fc2", w.fc2, bits, Slice::cols, hidden);
    return ss.g.add(x, u);
}

// Routes a "s{S}.b{B}.<field>" suffix to the block tensor it names.
Tensor* block_field(ElasticViT& m, const std::string& rest) {
    if (rest.size() < 6 || rest[0] != 's') return nullptr;
    const size_t dot = rest.find('.');
    if (dot == std::string::npos || rest[dot + 1] != 'b') return nullptr;
    const size_t dot2 = rest.find('.', dot + 1);
    if (dot2 == std::string::npos) return nullptr;
    int stage = 0, block = 0;
    try {
        stage = std::stoi(rest.substr(1, dot - 1));
        block = std::stoi(rest.substr(dot + 2, dot2 - dot - 2));
    } catch (const std::exception&) {
        return nullptr;
    }
    if (stage < 0 || stage >= m.space.stages() || block < 0 || block >= m.space.max_depth(stage))
        return nullptr;
    BlockWeights& w = m.blocks[stage][block];
    const std::string field = rest.substr(dot2 + 1);
    if (field == "ln1.g") return &w.ln1_g;
    if (field == "ln1.b") return &w.ln1_b;
    if (field == "ln2.g") return &w.ln2_g;
    if (field == "ln2.b") return &w.ln2_b;
    if (field == "attn.q.w") return &w.q;
    if (field == "attn.k.w") return &w.k;
    if (field == "attn.v.w") return &w.v;
    if (field == "attn.o.w") return &w.o;
    if (field == "fc1.w") return &w.fc1;
    if (field == "fc2.w") return &w.fc2;
    return nullptr;
}

struct ParamSlot {
    Tensor* tensor = nullptr;
    QuantizerParams* quant = nullptr;
    bool scale_field = false;
};

ParamSlot resolve_param(ElasticViT& m, const std::string& name) {
    ParamSlot slot;
    if (name.rfind("base.", 0) == 0) {
        const std::string rest = name.substr(5);
        if (rest == "patch.w") slot.tensor = &m.patch_w;
        else if (rest == "pos") slot.tensor = &m.pos;
        else if (rest == "head.w") slot.tensor = &m.head_w;
        else slot.tensor = block_field(m, rest);
    } else if (name.rfind("q.", 0) == 0) {
        const size_t last = name.rfind('.');
        const size_t prev = name.rfind('.', last - 1);
        if (last != std::string::npos && prev != std::string::npos && prev > 2) {
            const std::string layer = name.substr(2, prev - 2);
            const std::string spec = name.substr(prev + 1, last - prev - 1);
            const std::string field = name.substr(last + 1);
            if (spec.size() >= 2 && (spec[0] == 'w' || spec[0] == 'a') &&
                (field == "scale" || field == "zero")) {
                const QuantKind kind = spec[0] == 'w' ? QuantKind::weight : QuantKind::activation;
                try {
                    const int bits = std::stoi(spec.substr(1));
                    if (m.quantizers.contains(layer, kind, bits)) {
                        slot.quant = &m.quantizers.at(layer, kind, bits);
                        slot.scale_field = (field == "scale");
                    }
                } catch (const std::exception&) {
                }
            }
        }
    } else if (name.rfind("lora.", 0) == 0) {
        const size_t last = name.rfind('.');
        const size_t prev = name.rfind('.', last - 1);
        if (last != std::string::npos && prev != std::string::npos && prev > 5) {
            const std::string layer = name.substr(5, prev - 5);
            const std::string mod = name.substr(prev + 1, last - prev - 1);
            const std::string field = name.substr(last + 1);
            auto it = m.lora.find(layer);
            if (it != m.lora.end() && mod.size() >= 2 && mod[0] == 'm' &&
                (field == "a" || field == "b")) {
                try {
                    const size_t idx = static_cast<size_t>(std::stoi(mod.substr(1)));
                    if (idx < it->second.modules.size()) {
                        slot.tensor = field == "a" ? &it->second.modules[idx].A
                                                   : &it->second.modules[idx].B;
                    }
                } catch (const std::exception&) {
                }
            }
        }
    }
    if (!slot.tensor && !slot.quant) throw std::invalid_argument("unknown parameter: " + name);
    return slot;
}

} // namespace

ElasticViT::ElasticViT(const SearchSpace& sp, std::uint64_t seed) : space(sp) {
    space.validate();
    const int dim = space.embed_dim;
    auto init = [&](const std::string& name, std::vector<int> shape) {
        return gaussian_init(std::move(shape), Rng::derive_seed(seed, name));
    };
    patch_w = init("base.patch.w", {dim, space.patch * space.patch * space.in_channels});
    const int grid = space.max_resolution() / space.patch;
    pos = init("base.pos", {grid, grid, dim});
    for (int s = 0; s < space.stages(); ++s) {
        std::vector<BlockWeights> stage;
        for (int b = 0; b < space.max_depth(s); ++b) {
            const std::string p = "base.s" + std::to_string(s) + ".b" + std::to_string(b) + ".";
            BlockWeights w;
            w.ln1_g = Tensor::full({dim}, 1.0f);
            w.ln1_b = Tensor::zeros({dim});
            w.ln2_g = Tensor::full({dim}, 1.0f);
            w.ln2_b = Tensor::zeros({dim});
            w.q = init(p + "attn.q.w", {dim, dim});
            w.k = init(p + "attn.k.w", {dim, dim});
            w.v = init(p + "attn.v.w", {dim, dim});
            w.o = init(p + "attn.o.w", {dim, dim});
            w.fc1 = init(p + "fc1.w", {hidden_max(), dim});
            w.fc2 = init(p + "fc2.w", {dim, hidden_max()});
            stage.push_back(std::move(w));
        }
        blocks.push_back(std::move(stage));
    }
    head_w = init("base.head.w", {space.num_classes, dim});
}

int ElasticViT::hidden_max() const {
    const double r = *std::max_element(space.mlp_ratios.begin(), space.mlp_ratios.end());
    return static_cast<int>(std::ceil(r * space.embed_dim));
}

std::vector<std::string> ElasticViT::quantized_layers() const {
    std::vector<std::string> out = {"patch"};
    for (int s = 0; s < space.stages(); ++s) {
        for (int b = 0; b < space.max_depth(s); ++b) {
            const std::string p = "s" + std::to_string(s) + ".b" + std::to_string(b);
            for (const char* f : {".attn.q", ".attn.k", ".attn.v", ".attn.o", ".fc1", ".fc2"})
                out.push_back(p + f);
        }
    }
    return out;
}

bool ElasticViT::is_attach_point(const std::string& layer) {
    return ends_with(layer, ".attn.q") || ends_with(layer, ".attn.k") ||
           ends_with(layer, ".attn.v") || ends_with(layer, ".fc1") || ends_with(layer, ".fc2");
}

void ElasticViT::attach_lora(const LoraSettings& settings, std::uint64_t seed) {
    if (lora_attached) throw std::logic_error("lora banks are already attached");
    const int dim = space.embed_dim;
    for (const std::string& layer : quantized_layers()) {
        if (!is_attach_point(layer)) continue;
        int d = dim, k = dim;
        if (ends_with(layer, ".fc1")) d = hidden_max();
        if (ends_with(layer, ".fc2")) k = hidden_max();
        MultiplexBank bank = lora_init(d, k, settings.rank, settings.scaling, settings.mode,
                                       settings.bit_groups, Rng::derive_seed(seed, "lora." + layer));
        bank.detach = settings.detach;
        bank.switch_key = settings.switch_key;
        lora.emplace(layer, std::move(bank));
    }
    lora_attached = true;
}

Tensor ElasticViT::get_param(const std::string& name) const {
    ParamSlot slot = resolve_param(const_cast<ElasticViT&>(*this), name);
    if (slot.tensor) return *slot.tensor;
    return scalar1(slot.scale_field ? slot.quant->scale : slot.quant->zero_point);
}

void ElasticViT::set_param(const std::string& name, const Tensor& value) {
    ParamSlot slot = resolve_param(*this, name);
    if (slot.tensor) {
        if (!slot.tensor->same_shape(value)) {
            throw std::invalid_argument("parameter " + name + " expects shape " +
                                        shape_str(slot.tensor->shape()) + ", got " +
                                        shape_str(value.shape()));
        }
        *slot.tensor = value;
        return;
    }
    if (value.numel() != 1)
        throw std::invalid_argument("parameter " + name + " expects a scalar");
    if (slot.scale_field) {
        slot.quant->scale = std::max(value[0], kMinScale);
    } else {
        const float p = static_cast<float>(slot.quant->p());
        slot.quant->zero_point = std::min(std::max(value[0], 0.0f), p);
    }
}

std::vector<std::string> ElasticViT::base_param_names() const {
    std::vector<std::string> out = {"base.patch.w", "base.pos"};
    for (int s = 0; s < space.stages(); ++s) {
        for (int b = 0; b < space.max_depth(s); ++b) {
            const std::string p = "base.s" + std::to_string(s) + ".b" + std::to_string(b) + ".";
            for (const char* f : {"ln1.g", "ln1.b", "attn.q.w", "attn.k.w", "attn.v.w", "attn.o.w",
                                  "ln2.g", "ln2.b", "fc1.w", "fc2.w"})
                out.push_back(p + f);
        }
    }
    out.push_back("base.head.w");
    return out;
}

std::vector<std::string> ElasticViT::all_param_names() const {
    std::vector<std::string> out = base_param_names();
    for (const auto& [key, qp] : quantizers.entries()) {
        const size_t bar = key.rfind('|');
        const std::string base = "q." + key.substr(0, bar) + "." + key.substr(bar + 1);
        out.push_back(base + ".scale");
        out.push_back(base + ".zero");
        (void)qp;
    }
    for (const auto& [layer, bank] : lora) {
        for (size_t i = 0; i < bank.modules.size(); ++i) {
            out.push_back("lora." + layer + ".m" + std::to_string(i) + ".a");
            out.push_back("lora." + layer + ".m" + std::to_string(i) + ".b");
        }
    }
    return out;
}

Tensor interpolate_pos_embed(const ElasticViT& model, int resolution) {
    const auto& rs = model.space.resolutions;
    if (std::find(rs.begin(), rs.end(), resolution) == rs.end())
        throw std::invalid_argument("resolution " + std::to_string(resolution) + " is not in the space");
    const int tside = resolution / model.space.patch;
    if (tside == model.pos.dim(0)) return model.pos;
    return k_bilinear_resize(model.pos, tside, tside);
}

ForwardOutput configure_and_forward(ElasticViT& model, Graph& g, const SubnetConfig& cfg,
                                    const std::vector<Tensor>& images) {
    if (auto err = validate_config(model.space, cfg)) throw std::invalid_argument(*err);
    if (images.empty()) throw std::invalid_argument("forward needs at least one image");
    for (const Tensor& im : images) {
        if (im.ndim() != 3 || im.dim(0) != cfg.resolution || im.dim(1) != cfg.resolution ||
            im.dim(2) != model.space.in_channels) {
            throw std::invalid_argument("image shape " + shape_str(im.shape()) +
                                        " does not match configured resolution " +
                                        std::to_string(cfg.resolution));
        }
    }

    Session ss{g, model, {}, {}};
    const int tside = cfg.resolution / model.space.patch;
    const int tokens = tside * tside;
    const int dim = model.space.embed_dim;
    const bool bt = !model.base_frozen;

    Var posv = ss.param("base.pos", model.pos, bt);
    if (tside != model.pos.dim(0)) posv = g.bilinear_resize(posv, tside, tside);
    posv = g.reshape(posv, {tokens, dim});
    Var head = minmax_quantize_op(g, ss.param("base.head.w", model.head_w, bt), 8);

    ForwardOutput out;
    for (const Tensor& im : images) {
        Var x = g.constant(k_patchify(im, model.space.patch));
        x = quantized_linear(ss, x, "patch", model.patch_w, cfg.patch_bits, Slice::none, 0);
        x = g.add(x, posv);
        int layer = 0;
        for (int s = 0; s < model.space.stages(); ++s) {
            for (int b = 0; b < cfg.depths[static_cast<size_t>(s)]; ++b, ++layer)
                x = encoder_block(ss, x, s, b, cfg.layer_bits[static_cast<size_t>(layer)],
                                  cfg.mlp_ratios[static_cast<size_t>(layer)]);
        }
        Var logits = g.linear(x, head);
        logits = g.reshape(logits, {tside, tside, model.space.num_classes});
        logits = g.bilinear_resize(logits, cfg.resolution, cfg.resolution);
        logits = g.reshape(logits, {cfg.resolution * cfg.resolution, model.space.num_classes});
        out.logits.push_back(logits);
    }
    out.params = std::move(ss.trainable);
    return out;
}

void ensure_calibrated(ElasticViT& model, const Tensor& image) {
    SubnetConfig cfg = max_config(model.space);
    const size_t rounds = std::max(model.space.weight_bits.size(), model.space.act_bits.size());
    for (size_t i = 0; i < rounds; ++i) {
        const int wb = model.space.weight_bits[std::min(i, model.space.weight_bits.size() - 1)];
        const int ab = model.space.act_bits[std::min(i, model.space.act_bits.size() - 1)];
        cfg.patch_bits = {wb, ab};
        for (auto& b : cfg.layer_bits) b = {wb, ab};
        Graph g;
        configure_and_forward(model, g, cfg, {image});
    }
}

namespace {

const QuantizerParams& stored_quantizer(const ElasticViT& model, const std::string& layer,
                                        QuantKind kind, int bits) {
    if (!model.quantizers.contains(layer, kind, bits) ||
        !model.quantizers.at(layer, kind, bits).initialized) {
        throw std::runtime_error("quantizer for " + QuantizerBank::key(layer, kind, bits) +
                                 " is uncalibrated; run calibration or training first");
    }
    return model.quantizers.at(layer, kind, bits);
}

MergedLayer fold_layer(const ElasticViT& model, const std::string& layer, const Tensor& w_full,
                       const BitPair& bits, Slice slice, int count) {
    MergedLayer out;
    out.name = layer;
    out.w_bits = bits.w;
    out.a_bits = bits.a;

    Tensor w0 = w_full;
    if (slice == Slice::rows) w0 = take_rows(w_full, count);
    if (slice == Slice::cols) w0 = take_cols(w_full, count);

    if (model.lora_attached && ElasticViT::is_attach_point(layer)) {
        MultiplexBank view = model.lora.at(layer);
        for (auto& mod : view.modules) {
            if (slice == Slice::rows) mod.B = take_rows(mod.B, count);
            if (slice == Slice::cols) mod.A = take_cols(mod.A, count);
        }
        QuantizerParams q;
        if (bits.w != kFullBits) q = stored_quantizer(model, layer, QuantKind::weight, bits.w);
        out.weight = merge(w0, view, bits, q);
        out.wq = q;
    } else if (bits.w != kFullBits) {
        out.wq = stored_quantizer(model, layer, QuantKind::weight, bits.w);
        out.weight = fake_quantize(w0, out.wq);
    } else {
        out.weight = w0;
    }
    if (bits.a != kFullBits) {
        out.aq = stored_quantizer(model, layer, QuantKind::activation, bits.a);
    }
    return out;
}

} // namespace

std::vector<MergedLayer> merged_layers(const ElasticViT& model, const SubnetConfig& cfg) {
    if (auto err = validate_config(model.space, cfg)) {
        throw std::invalid_argument("merged_layers: " + *err);
    }
    std::vector<MergedLayer> out;
    out.push_back(fold_layer(model, "patch", model.patch_w, cfg.patch_bits, Slice::none, 0));
    size_t flat = 0;
    for (size_t s = 0; s < cfg.depths.size(); ++s) {
        for (int b = 0; b < cfg.depths[s]; ++b, ++flat) {
            const std::string prefix = "s" + std::to_string(s) + ".b" + std::to_string(b);
            const BitPair& bits = cfg.layer_bits[flat];
            const BlockWeights& w = model.blocks[s][static_cast<size_t>(b)];
            const int hidden =
                static_cast<int>(std::ceil(cfg.mlp_ratios[flat] * model.space.embed_dim));
            out.push_back(fold_layer(model, prefix + ".attn.q", w.q, bits, Slice::none, 0));
            out.push_back(fold_layer(model, prefix + ".attn.k", w.k, bits, Slice::none, 0));
            out.push_back(fold_layer(model, prefix + ".attn.v", w.v, bits, Slice::none, 0));
            out.push_back(fold_layer(model, prefix + ".attn.o", w.o, bits, Slice::none, 0));
            out.push_back(fold_layer(model, prefix + ".fc1", w.fc1, bits, Slice::rows, hidden));
            out.push_back(fold_layer(model, prefix + ".fc2", w.fc2, bits, Slice::cols, hidden));
        }
    }
    return out;
}

} // namespace qnas
