#pragma once

// Reproducible randomness. mt19937_64 is fully specified by the C++ standard,
// and every draw below is derived from its raw 64-bit output with fixed
// arithmetic (no std::*_distribution, whose results vary across standard
// libraries). A given seed therefore produces identical streams on every
// platform, which the run-manifest replay contract depends on.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "lexgen/errors.hpp"
#include "lexgen/logspace.hpp"

namespace lexgen {

class Rng {
   public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in the open interval (0, 1); 53-bit resolution.
    double uniform() {
        return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double exponential() { return -std::log(uniform()); }

    // Index drawn proportionally to linear-space weights (need not be normalized).
    size_t categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (!(total > 0.0)) throw InternalError("categorical: no positive mass");
        double u = uniform() * total;
        double acc = 0.0;
        size_t last = 0;
        for (size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] <= 0.0) continue;
            acc += weights[i];
            last = i;
            if (u <= acc) return i;
        }
        return last;  // u landed in the round-off tail
    }

    size_t categorical_log(std::span<const double> logw) {
        double m = kNegInf;
        for (double v : logw) m = std::max(m, v);
        if (m == kNegInf) throw InternalError("categorical_log: all -inf");
        std::vector<double> w(logw.size());
        for (size_t i = 0; i < logw.size(); ++i)
            w[i] = logw[i] == kNegInf ? 0.0 : std::exp(logw[i] - m);
        return categorical(w);
    }

    // Dirichlet(1) row: normalized Exp(1) draws, returned in log space.
    std::vector<double> log_simplex(size_t k) {
        std::vector<double> e(k);
        double total = 0.0;
        for (auto& v : e) {
            v = exponential();
            total += v;
        }
        std::vector<double> out(k);
        for (size_t i = 0; i < k; ++i) out[i] = std::log(e[i] / total);
        return out;
    }

    // Independent child stream; distinct tags give decorrelated streams.
    Rng fork(uint64_t tag) {
        uint64_t x = next_u64() ^ (tag * 0x9e3779b97f4a7c15ULL);
        // splitmix64 finalizer
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return Rng(x);
    }

   private:
    std::mt19937_64 gen_;
};

}  // namespace lexgen
