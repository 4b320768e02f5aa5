// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace qnas {

/// Deterministic random source. All distributions are implemented on top of
/// the raw mt19937_64 stream so that draws are reproducible across platforms
/// and the full state round-trips through save_state/load_state.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform integer in [0, n). n must be positive.
    int uniform_int(int n);

    /// Uniform double in [0, 1).
    double uniform01();

    float uniform(float lo, float hi);

    /// Gaussian via Box-Muller; consumes exactly two draws per call.
    float normal(float mean, float stddev);

    bool bernoulli(double p) { return uniform01() < p; }

    template <typename T>
    const T& pick(const std::vector<T>& options) {
        return options[static_cast<size_t>(uniform_int(static_cast<int>(options.size())))];
    }

    std::string save_state() const;
    void load_state(const std::string& state);

    /// Derive an independent stream from a seed and a stream label.
    static uint64_t derive_seed(uint64_t seed, const std::string& stream);

private:
    std::mt19937_64 engine_;
};

/// FNV-1a 64-bit hash, used for config digests and seed derivation.
uint64_t fnv1a64(const void* bytes, size_t len, uint64_t basis = 14695981039346656037ull);
uint64_t fnv1a64(const std::string& s);

} // namespace qnas
