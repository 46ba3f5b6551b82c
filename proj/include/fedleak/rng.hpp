#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace fedleak {

// 64-bit finalizer from splitmix64. Statelessly turns (key, counter) pairs
// into uniform bits, so streams can be re-derived from their seeds at any
// point and results do not depend on call interleaving across threads.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Folds a list of identifiers (global seed, client id, round, image id, ...)
/// into one sub-stream seed.
inline std::uint64_t seed_hash(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x243f6a8885a308d3ULL;  // arbitrary nonzero start
    for (std::uint64_t p : parts) h = mix64(h ^ mix64(p));
    return h;
}

/// Counter-based uniform source: draw i of stream (seed, stream) is a pure
/// function of (seed, stream, i). Identical seeds give identical sequences on
/// every platform.
class CounterRng {
  public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(seed_hash({seed, stream})) {}

    std::uint64_t next_u64() { return mix64(key_ ^ mix64(counter_++)); }

    /// Uniform double strictly inside (0, 1).
    double next_unit() {
        const std::uint64_t bits = next_u64() >> 11;  // 53 bits
        return (double(bits) + 0.5) * (1.0 / 9007199254740992.0);
    }

    float next_uniform(float lo, float hi) {
        return float(lo + (double(hi) - double(lo)) * next_unit());
    }

    /// N(mean, sigma^2) via Box-Muller (two uniforms per draw, cosine branch).
    float next_gaussian(float mean, float sigma) {
        const double u1 = next_unit();
        const double u2 = next_unit();
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        return float(mean + double(sigma) * z);
    }

    /// Laplace(0, b) by inverse CDF: x = -b * sign(u) * ln(1 - 2|u|) with
    /// u uniform in (-1/2, 1/2).
    float next_laplace(float b) {
        const double u = next_unit() - 0.5;
        const double s = (u < 0.0) ? -1.0 : 1.0;
        return float(-double(b) * s * std::log(1.0 - 2.0 * std::fabs(u)));
    }

    /// Uniform index in [0, n).
    std::size_t next_below(std::size_t n) { return std::size_t(next_u64() % n); }

  private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace fedleak
