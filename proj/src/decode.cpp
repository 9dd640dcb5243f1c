#include "lexgen/decode.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lexgen/errors.hpp"
#include "lexgen/logspace.hpp"
#include "lexgen/parallel.hpp"

namespace lexgen {

namespace {

void check_config(const DecodeConfig& cfg, const DpCache& cache) {
    if (cfg.mode == FusionMode::kSupervised &&
        !(cfg.weight > 0.0 && cfg.weight < 1.0))
        throw InputError("supervised fusion weight must lie in (0, 1)");
    if (cfg.max_len != 0 && cfg.max_len != cache.horizon())
        throw InputError(
            "max_len differs from the cache horizon; rebuild the cache for the "
            "requested length");
    if (cfg.beam_size < 1) throw InputError("beam_size must be >= 1");
}

std::string residual_clauses(const DpCache& cache, uint32_t row) {
    std::ostringstream out;
    out << "residual clauses:";
    for (int c : cache.pending_clauses(row)) out << ' ' << c;
    return out.str();
}

// log Pr(x_{1:t}, X_{t+1} = v) for every v, sharing one transition fold.
std::vector<double> next_prefix_joint(const Hmm& hmm, const GenerationState& state) {
    const int h = hmm.num_states();
    std::vector<double> pre(h);
    if (state.prefix.empty()) {
        for (int z = 0; z < h; ++z) pre[z] = hmm.initial(z);
    } else {
        for (int z2 = 0; z2 < h; ++z2) {
            double acc = kNegInf;
            for (int z = 0; z < h; ++z)
                acc = log_add(acc, state.forward[z] + hmm.transition(z, z2));
            pre[z2] = acc;
        }
    }
    std::vector<double> out(hmm.vocab_size());
    for (Token v = 0; v < hmm.vocab_size(); ++v) {
        double acc = kNegInf;
        for (int z = 0; z < h; ++z) acc = log_add(acc, pre[z] + hmm.emission(z, v));
        out[v] = acc;
    }
    return out;
}

// Shared core: fused vector plus the LM vector (callers track lm_ll).
std::vector<double> fused_step(const DecodeConfig& cfg, const DpCache& cache,
                               const GenerationState& state, BaseLm& lm,
                               std::vector<double>& lm_logprobs) {
    const Hmm& hmm = cache.hmm();
    if (lm.vocab_size() != hmm.vocab_size())
        throw InputError("base LM and guidance model vocabularies differ");
    lm_logprobs = lm.next_logprobs(state.prefix);
    if (lm_logprobs.size() != static_cast<size_t>(hmm.vocab_size()))
        throw InputError("base LM returned a vector of the wrong size");

    std::vector<double> joint_next = cache.next_token_joint(state);
    std::vector<double> score(hmm.vocab_size(), kNegInf);
    if (cfg.mode == FusionMode::kUnsupervised) {
        // Pr(constraint | x, v) * Pr_lm(v | x)
        std::vector<double> prefix_next = next_prefix_joint(hmm, state);
        for (Token v = 0; v < hmm.vocab_size(); ++v) {
            if (joint_next[v] == kNegInf || prefix_next[v] == kNegInf) continue;
            score[v] = joint_next[v] - prefix_next[v] + lm_logprobs[v];
        }
    } else {
        // Pr_hmm(v | x, constraint)^w * Pr_lm(v | x)^(1-w)
        double joint_here = cache.joint_with_constraint(state);
        if (joint_here == kNegInf)
            throw InfeasibleError("no continuation can satisfy the constraint; " +
                                  residual_clauses(cache, state.row));
        for (Token v = 0; v < hmm.vocab_size(); ++v) {
            if (joint_next[v] == kNegInf) continue;
            score[v] = cfg.weight * (joint_next[v] - joint_here) +
                       (1.0 - cfg.weight) * lm_logprobs[v];
        }
    }
    double norm = log_sum_exp(score);
    if (norm == kNegInf)
        throw InfeasibleError("no continuation can satisfy the constraint; " +
                              residual_clauses(cache, state.row));
    for (double& s : score)
        if (s != kNegInf) s -= norm;
    return score;
}

}  // namespace

std::vector<double> fused_next(const DecodeConfig& cfg, const DpCache& cache,
                               const GenerationState& state, BaseLm& lm) {
    check_config(cfg, cache);
    std::vector<double> lm_logprobs;
    return fused_step(cfg, cache, state, lm, lm_logprobs);
}

GenOutput sample_constrained(const DecodeConfig& cfg, const DpCache& cache,
                             BaseLm& lm, Rng& rng) {
    check_config(cfg, cache);
    GenerationState state = cache.initial_state();
    if (cache.joint_with_constraint(state) == kNegInf)
        throw InfeasibleError("constraint unsatisfiable within the horizon; " +
                              residual_clauses(cache, state.row));

    GenOutput out;
    const Token eos = cache.hmm().eos_token();
    std::vector<double> lm_logprobs;
    while (static_cast<int>(state.prefix.size()) < cache.horizon()) {
        std::vector<double> step;
        try {
            step = fused_step(cfg, cache, state, lm, lm_logprobs);
        } catch (const InfeasibleError& e) {
            // exact guidance zeroes only non-extendable tokens, so a feasible
            // start can never strand us
            throw InternalError(std::string("dead end while sampling: ") + e.what());
        }
        Token v = static_cast<Token>(rng.categorical_log(step));
        out.fused_ll += step[v];
        out.lm_ll += lm_logprobs[v];
        cache.advance_state(state, v);
        out.tokens.push_back(v);
        if (v == eos) break;  // absorbing region: the tail is determined
    }
    if (!cache.row_satisfied(state.row))
        throw InternalError("sampled sequence left clauses unsatisfied");
    return out;
}

std::vector<GenOutput> beam_search_constrained(const DecodeConfig& cfg,
                                               const DpCache& cache, BaseLm& lm) {
    check_config(cfg, cache);
    const Token eos = cache.hmm().eos_token();
    const int vocab = cache.hmm().vocab_size();

    struct Hyp {
        GenerationState state;
        double fused_ll = 0.0;
        double lm_ll = 0.0;
    };
    std::vector<Hyp> live;
    live.push_back({cache.initial_state(), 0.0, 0.0});
    if (cache.joint_with_constraint(live[0].state) == kNegInf)
        throw InfeasibleError("constraint unsatisfiable within the horizon; " +
                              residual_clauses(cache, live[0].state.row));
    std::vector<GenOutput> finished;

    for (int t = 0; t < cache.horizon() && !live.empty(); ++t) {
        // score all live beams (read-only over cache and lm state)
        std::vector<std::vector<double>> fused(live.size()), lmv(live.size());
        parallel_for(live.size(), cfg.threads, [&](size_t lo, size_t hi) {
            for (size_t i = lo; i < hi; ++i)
                fused[i] = fused_step(cfg, cache, live[i].state, lm, lmv[i]);
        });

        struct Cand {
            double score;
            Token token;
            size_t beam;
        };
        std::vector<Cand> cands;
        for (size_t i = 0; i < live.size(); ++i)
            for (Token v = 0; v < vocab; ++v)
                if (fused[i][v] != kNegInf)
                    cands.push_back({live[i].fused_ll + fused[i][v], v, i});
        if (cands.empty())
            throw InternalError("all beams died despite a feasible start");
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.token != b.token) return a.token < b.token;
            return a.beam < b.beam;
        });
        if (static_cast<int>(cands.size()) > cfg.beam_size)
            cands.resize(cfg.beam_size);

        std::vector<Hyp> next;
        next.reserve(cands.size());
        for (const Cand& c : cands) {
            Hyp h = live[c.beam];
            h.fused_ll = c.score;
            h.lm_ll += lmv[c.beam][c.token];
            cache.advance_state(h.state, c.token);
            if (c.token == eos || static_cast<int>(h.state.prefix.size()) ==
                                      cache.horizon()) {
                if (!cache.row_satisfied(h.state.row))
                    throw InternalError("finished beam left clauses unsatisfied");
                finished.push_back({h.state.prefix, h.fused_ll, h.lm_ll});
            } else {
                next.push_back(std::move(h));
            }
        }
        live.swap(next);
    }

    std::stable_sort(finished.begin(), finished.end(),
                     [](const GenOutput& a, const GenOutput& b) {
                         return a.fused_ll > b.fused_ll;
                     });
    return finished;
}

std::vector<GenOutput> rerank_by_lm(std::vector<GenOutput> beams) {
    if (beams.empty()) throw InputError("rerank_by_lm: empty beam list");
    std::stable_sort(beams.begin(), beams.end(),
                     [](const GenOutput& a, const GenOutput& b) {
                         return a.lm_ll > b.lm_ll;
                     });
    return beams;
}

}  // namespace lexgen
