// SPDX-License-Identifier: Apache-2.0
#include "qnas/rng.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace qnas {

int Rng::uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("uniform_int needs n > 0");
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
}

double Rng::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

float Rng::uniform(float lo, float hi) {
    return lo + static_cast<float>(uniform01() * (static_cast<double>(hi) - static_cast<double>(lo)));
}

float Rng::normal(float mean, float stddev) {
    // u1 in (0,1] so the log is finite.
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return mean + stddev * static_cast<float>(z);
}

std::string Rng::save_state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::load_state(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (is.fail()) throw std::runtime_error("invalid rng state string");
}

uint64_t Rng::derive_seed(uint64_t seed, const std::string& stream) {
    uint64_t h = fnv1a64(stream);
    h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

uint64_t fnv1a64(const void* bytes, size_t len, uint64_t basis) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    uint64_t h = basis;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

} // namespace qnas
