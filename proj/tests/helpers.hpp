#pragma once

// Shared test utilities. The oracles here enumerate hidden-state paths in
// linear space and stay deliberately independent of the library's forward
// and dynamic-programming code paths.

#include <cmath>
#include <functional>
#include <vector>

#include "lexgen/hmm.hpp"
#include "lexgen/logspace.hpp"

namespace testutil {

using lexgen::Hmm;
using lexgen::Token;
using lexgen::TokenSeq;

// Calls fn once per sequence in V^n, odometer order.
inline void for_all_seqs(int vocab, int len, const std::function<void(const TokenSeq&)>& fn) {
    TokenSeq seq(len, 0);
    while (true) {
        fn(seq);
        int i = len - 1;
        while (i >= 0 && seq[i] == vocab - 1) seq[i--] = 0;
        if (i < 0) break;
        ++seq[i];
    }
}

// log Pr(x_{1:t}, Z_t = z) by summing over every state path.
inline std::vector<double> enum_forward(const Hmm& hmm, const TokenSeq& prefix) {
    const int h = hmm.num_states();
    const int t = static_cast<int>(prefix.size());
    std::vector<double> mass(h, 0.0);  // linear space; test scales cannot underflow
    std::vector<int> path(t, 0);
    while (true) {
        double p = std::exp(hmm.initial(path[0])) * std::exp(hmm.emission(path[0], prefix[0]));
        for (int i = 1; i < t; ++i)
            p *= std::exp(hmm.transition(path[i - 1], path[i])) *
                 std::exp(hmm.emission(path[i], prefix[i]));
        mass[path[t - 1]] += p;
        int i = t - 1;
        while (i >= 0 && path[i] == h - 1) path[i--] = 0;
        if (i < 0) break;
        ++path[i];
    }
    std::vector<double> out(h);
    for (int z = 0; z < h; ++z)
        out[z] = mass[z] == 0.0 ? lexgen::kNegInf : std::log(mass[z]);
    return out;
}

inline double enum_prefix_logprob(const Hmm& hmm, const TokenSeq& prefix) {
    if (prefix.empty()) return 0.0;
    std::vector<double> f = enum_forward(hmm, prefix);
    double mass = 0.0;
    for (double v : f)
        if (v != lexgen::kNegInf) mass += std::exp(v);
    return mass == 0.0 ? lexgen::kNegInf : std::log(mass);
}

}  // namespace testutil
