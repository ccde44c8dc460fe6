#pragma once

#include "safemil/common.hpp"

#include <cstdint>
#include <random>

namespace safemil {

/// Seeded random stream with explicit, platform-independent draw semantics.
/// std::mt19937_64 provides the bit stream; the derived draws below avoid
/// std::*_distribution so identical seeds give identical sequences on any
/// standard library.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    Scalar uniform01() {
        return static_cast<Scalar>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n). n must be positive.
    int uniform_int(int n) {
        if (n <= 0) throw ContractError("Rng::uniform_int: n must be positive");
        // rejection sampling to remove modulo bias
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return static_cast<int>(v % un);
    }

    Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform01(); }

    bool bernoulli(Scalar p) { return uniform01() < p; }

    /// Standard normal via Box-Muller (one value per call, no cached spare).
    Scalar normal() {
        Scalar u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const Scalar u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    /// Sample an index from an unnormalized non-negative weight row.
    int categorical(const VectorRef& weights) {
        const Scalar total = weights.sum();
        if (!(total > 0.0)) throw ContractError("Rng::categorical: weights sum to zero");
        Scalar u = uniform01() * total;
        for (Eigen::Index i = 0; i + 1 < weights.size(); ++i) {
            u -= weights[i];
            if (u < 0.0) return static_cast<int>(i);
        }
        return static_cast<int>(weights.size() - 1);
    }

    /// Child stream with an independent seed; deterministic in (parent seed, stream id).
    Rng spawn(std::uint64_t stream) { return Rng(mix_seed(engine_(), stream)); }

  private:
    std::mt19937_64 engine_;
};

}  // namespace safemil
