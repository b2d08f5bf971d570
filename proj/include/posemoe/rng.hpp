// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace posemoe {

/// Seeded generator. The engine is std::mt19937_64, whose integer sequence is
/// fixed by the standard; real-valued draws are derived here (53-bit uniforms,
/// Box–Muller normals) rather than through <random> distributions, whose
/// algorithms vary between standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();

    template <typename T>
    void fill_normal(std::span<T> out, double stddev = 1.0) {
        for (auto& v : out) v = static_cast<T>(stddev * normal());
    }
    template <typename T>
    void fill_uniform(std::span<T> out, double lo, double hi) {
        for (auto& v : out) v = static_cast<T>(uniform(lo, hi));
    }

    /// Text serialisation of the full stream state.
    std::string state() const;
    void set_state(const std::string& state);

    /// SplitMix64-style mixing of (seed, stream) into an independent seed.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace posemoe
