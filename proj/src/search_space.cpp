// SPDX-License-Identifier: Apache-2.0
#include "qnas/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "qnas/quantize.hpp"

namespace qnas {

int SearchSpace::max_depth(int stage) const {
    return *std::max_element(depth_options[static_cast<size_t>(stage)].begin(),
                             depth_options[static_cast<size_t>(stage)].end());
}

int SearchSpace::max_resolution() const {
    return *std::max_element(resolutions.begin(), resolutions.end());
}

void SearchSpace::validate() const {
    if (resolutions.empty()) throw std::invalid_argument("space: no resolutions");
    if (depth_options.empty()) throw std::invalid_argument("space: no stages");
    if (mlp_ratios.empty()) throw std::invalid_argument("space: no MLP ratios");
    if (weight_bits.empty() || act_bits.empty()) throw std::invalid_argument("space: no bit options");
    for (int r : resolutions) {
        if (r <= 0 || r % patch != 0) {
            throw std::invalid_argument("space: resolution " + std::to_string(r) +
                                        " not divisible by patch " + std::to_string(patch));
        }
    }
    for (const auto& opts : depth_options) {
        if (opts.empty()) throw std::invalid_argument("space: empty depth options for a stage");
        for (int d : opts)
            if (d < 1) throw std::invalid_argument("space: depth option " + std::to_string(d) + " < 1");
    }
    for (double m : mlp_ratios)
        if (!(m > 0.0)) throw std::invalid_argument("space: non-positive MLP ratio");
    for (int b : weight_bits)
        if (!is_valid_bits(b)) throw std::invalid_argument("space: bad weight bits " + std::to_string(b));
    for (int b : act_bits)
        if (!is_valid_bits(b)) throw std::invalid_argument("space: bad activation bits " + std::to_string(b));
    if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
        throw std::invalid_argument("space: embed dim " + std::to_string(embed_dim) +
                                    " not divisible by heads " + std::to_string(heads));
    }
    if (in_channels < 1 || num_classes < 2) throw std::invalid_argument("space: bad channel/class counts");
}

int SubnetConfig::active_layers() const {
    int total = 0;
    for (int d : depths) total += d;
    return total;
}

SubnetConfig sample_uniform(const SearchSpace& space, Rng& rng, int res_cap) {
    std::vector<int> res_pool;
    for (int r : space.resolutions)
        if (res_cap <= 0 || r <= res_cap) res_pool.push_back(r);
    if (res_pool.empty()) {
        throw std::invalid_argument("sample_uniform: no resolution satisfies cap " + std::to_string(res_cap));
    }
    SubnetConfig cfg;
    cfg.resolution = rng.pick(res_pool);
    for (int s = 0; s < space.stages(); ++s) {
        cfg.depths.push_back(rng.pick(space.depth_options[static_cast<size_t>(s)]));
    }
    const int layers = cfg.active_layers();
    for (int l = 0; l < layers; ++l) cfg.mlp_ratios.push_back(rng.pick(space.mlp_ratios));
    cfg.patch_bits.w = rng.pick(space.weight_bits);
    cfg.patch_bits.a = rng.pick(space.act_bits);
    for (int l = 0; l < layers; ++l) {
        BitPair bp;
        bp.w = rng.pick(space.weight_bits);
        bp.a = rng.pick(space.act_bits);
        cfg.layer_bits.push_back(bp);
    }
    return cfg;
}

std::optional<std::string> validate_config(const SearchSpace& space, const SubnetConfig& cfg) {
    const auto in = [](const auto& options, const auto& v) {
        return std::find(options.begin(), options.end(), v) != options.end();
    };
    if (!in(space.resolutions, cfg.resolution)) {
        return "resolution " + std::to_string(cfg.resolution) + " not an option";
    }
    if (static_cast<int>(cfg.depths.size()) != space.stages()) {
        return "depth list has " + std::to_string(cfg.depths.size()) + " stages, space has " +
               std::to_string(space.stages());
    }
    for (int s = 0; s < space.stages(); ++s) {
        if (!in(space.depth_options[static_cast<size_t>(s)], cfg.depths[static_cast<size_t>(s)])) {
            return "depth " + std::to_string(cfg.depths[static_cast<size_t>(s)]) + " not an option for stage " +
                   std::to_string(s);
        }
    }
    const int layers = cfg.active_layers();
    if (static_cast<int>(cfg.mlp_ratios.size()) != layers) {
        return "mlp ratio list has " + std::to_string(cfg.mlp_ratios.size()) + " entries for " +
               std::to_string(layers) + " active layers";
    }
    for (double m : cfg.mlp_ratios)
        if (!in(space.mlp_ratios, m)) return "mlp ratio " + std::to_string(m) + " not an option";
    if (static_cast<int>(cfg.layer_bits.size()) != layers) {
        return "bit list has " + std::to_string(cfg.layer_bits.size()) + " entries for " +
               std::to_string(layers) + " active layers";
    }
    if (!in(space.weight_bits, cfg.patch_bits.w)) {
        return "patch weight bits " + std::to_string(cfg.patch_bits.w) + " not an option";
    }
    if (!in(space.act_bits, cfg.patch_bits.a)) {
        return "patch activation bits " + std::to_string(cfg.patch_bits.a) + " not an option";
    }
    for (size_t l = 0; l < cfg.layer_bits.size(); ++l) {
        if (!in(space.weight_bits, cfg.layer_bits[l].w)) {
            return "layer " + std::to_string(l) + " weight bits " + std::to_string(cfg.layer_bits[l].w) +
                   " not an option";
        }
        if (!in(space.act_bits, cfg.layer_bits[l].a)) {
            return "layer " + std::to_string(l) + " activation bits " + std::to_string(cfg.layer_bits[l].a) +
                   " not an option";
        }
    }
    return std::nullopt;
}

SubnetConfig max_config(const SearchSpace& space) {
    SubnetConfig cfg;
    cfg.resolution = space.max_resolution();
    for (int s = 0; s < space.stages(); ++s) cfg.depths.push_back(space.max_depth(s));
    const double top_ratio = *std::max_element(space.mlp_ratios.begin(), space.mlp_ratios.end());
    const int top_w = *std::max_element(space.weight_bits.begin(), space.weight_bits.end());
    const int top_a = *std::max_element(space.act_bits.begin(), space.act_bits.end());
    const int layers = cfg.active_layers();
    cfg.mlp_ratios.assign(static_cast<size_t>(layers), top_ratio);
    cfg.patch_bits = BitPair{top_w, top_a};
    cfg.layer_bits.assign(static_cast<size_t>(layers), BitPair{top_w, top_a});
    return cfg;
}

std::string to_subnet_string(const SubnetConfig& cfg) {
    std::ostringstream out;
    out << "res=" << cfg.resolution << ";d=";
    for (size_t s = 0; s < cfg.depths.size(); ++s) out << (s ? "," : "") << cfg.depths[s];
    out << ";mlp=";
    for (size_t l = 0; l < cfg.mlp_ratios.size(); ++l) out << (l ? "," : "") << cfg.mlp_ratios[l];
    out << ";bits=w" << cfg.patch_bits.w << "a" << cfg.patch_bits.a;
    for (const BitPair& bp : cfg.layer_bits) out << ",w" << bp.w << "a" << bp.a;
    return out.str();
}

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : text) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(cur);
    return parts;
}

BitPair parse_bits(const std::string& token) {
    const size_t a_pos = token.find('a', 1);
    if (token.empty() || token[0] != 'w' || a_pos == std::string::npos) {
        throw std::invalid_argument("subnet string: bad bits token '" + token + "'");
    }
    BitPair bp;
    bp.w = std::stoi(token.substr(1, a_pos - 1));
    bp.a = std::stoi(token.substr(a_pos + 1));
    return bp;
}

} // namespace

SubnetConfig parse_subnet_string(const std::string& text) {
    SubnetConfig cfg;
    bool saw_res = false, saw_d = false, saw_mlp = false, saw_bits = false;
    for (const std::string& field : split(text, ';')) {
        const size_t eq = field.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("subnet string: field '" + field + "' has no '='");
        }
        const std::string key = field.substr(0, eq);
        const std::string value = field.substr(eq + 1);
        if (key == "res") {
            cfg.resolution = std::stoi(value);
            saw_res = true;
        } else if (key == "d") {
            for (const std::string& tok : split(value, ',')) cfg.depths.push_back(std::stoi(tok));
            saw_d = true;
        } else if (key == "mlp") {
            for (const std::string& tok : split(value, ',')) cfg.mlp_ratios.push_back(std::stod(tok));
            saw_mlp = true;
        } else if (key == "bits") {
            const std::vector<std::string> toks = split(value, ',');
            if (toks.empty()) throw std::invalid_argument("subnet string: empty bits field");
            cfg.patch_bits = parse_bits(toks[0]);
            for (size_t i = 1; i < toks.size(); ++i) cfg.layer_bits.push_back(parse_bits(toks[i]));
            saw_bits = true;
        } else {
            throw std::invalid_argument("subnet string: unknown field '" + key + "'");
        }
    }
    if (!saw_res || !saw_d || !saw_mlp || !saw_bits) {
        throw std::invalid_argument("subnet string: missing one of res/d/mlp/bits in '" + text + "'");
    }
    if (cfg.layer_bits.size() != cfg.mlp_ratios.size()) {
        throw std::invalid_argument("subnet string: " + std::to_string(cfg.layer_bits.size()) +
                                    " layer bit entries for " + std::to_string(cfg.mlp_ratios.size()) +
                                    " mlp entries");
    }
    return cfg;
}

std::vector<SubnetConfig> enumerate_space(const SearchSpace& space, size_t limit) {
    std::vector<SubnetConfig> all;
    const auto guard = [&]() {
        if (all.size() >= limit) {
            throw std::length_error("enumerate_space: more than " + std::to_string(limit) + " configs");
        }
    };

    // Depth-first over the same field order sampling uses.
    std::function<void(SubnetConfig&, int)> fill_bits = [&](SubnetConfig& cfg, int layer) {
        const int layers = cfg.active_layers();
        if (layer == layers) {
            guard();
            all.push_back(cfg);
            return;
        }
        for (int w : space.weight_bits) {
            for (int a : space.act_bits) {
                cfg.layer_bits.push_back(BitPair{w, a});
                fill_bits(cfg, layer + 1);
                cfg.layer_bits.pop_back();
            }
        }
    };
    std::function<void(SubnetConfig&, int)> fill_ratios = [&](SubnetConfig& cfg, int layer) {
        const int layers = cfg.active_layers();
        if (layer == layers) {
            for (int w : space.weight_bits) {
                for (int a : space.act_bits) {
                    cfg.patch_bits = BitPair{w, a};
                    fill_bits(cfg, 0);
                }
            }
            return;
        }
        for (double m : space.mlp_ratios) {
            cfg.mlp_ratios.push_back(m);
            fill_ratios(cfg, layer + 1);
            cfg.mlp_ratios.pop_back();
        }
    };
    std::function<void(SubnetConfig&, int)> fill_depths = [&](SubnetConfig& cfg, int stage) {
        if (stage == space.stages()) {
            fill_ratios(cfg, 0);
            return;
        }
        for (int d : space.depth_options[static_cast<size_t>(stage)]) {
            cfg.depths.push_back(d);
            fill_depths(cfg, stage + 1);
            cfg.depths.pop_back();
        }
    };

    SubnetConfig cfg;
    for (int r : space.resolutions) {
        cfg.resolution = r;
        fill_depths(cfg, 0);
    }
    return all;
}

} // namespace qnas
