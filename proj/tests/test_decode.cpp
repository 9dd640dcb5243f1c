#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "instancegen.hpp"
#include "lexgen/decode.hpp"
#include "lexgen/errors.hpp"
#include "lexgen/logspace.hpp"
#include "lexgen/oracle.hpp"

using namespace lexgen;
using testutil::Instance;
using testutil::InstanceParams;
using testutil::random_instance;
using testutil::random_prefix;

namespace {

Cnf compile_clauses(std::vector<std::vector<TokenSeq>> clauses, int vocab) {
    CnfSpec spec;
    spec.clauses = std::move(clauses);
    return Cnf::compile(spec, vocab);
}

// one clause satisfied by any first token: no effective constraint
Cnf top_constraint(int vocab) {
    std::vector<TokenSeq> ks;
    for (Token v = 0; v < vocab; ++v) ks.push_back({v});
    CnfSpec spec;
    spec.clauses.push_back(ks);
    return Cnf::compile(spec, vocab);
}

}  // namespace

TEST_CASE("self-fusion equals the exact constrained conditional") {
    Rng rng(42);
    InstanceParams p;
    for (int trial = 0; trial < 5; ++trial) {
        Instance inst = random_instance(rng, p);
        DpCache cache = DpCache::build(inst.hmm, inst.cnf);
        HmmLm lm(inst.hmm);
        DecodeConfig cfg;  // unsupervised
        GenerationState state = cache.initial_state();
        for (Token v : random_prefix(rng, p, 2)) cache.advance_state(state, v);
        if (cache.joint_with_constraint(state) == kNegInf) continue;
        std::vector<double> fused = fused_next(cfg, cache, state, lm);
        std::vector<double> ntj = cache.next_token_joint(state);
        double joint = cache.joint_with_constraint(state);
        for (Token v = 0; v < p.vocab; ++v) {
            if (ntj[v] == kNegInf) {
                CHECK(fused[v] == kNegInf);
            } else {
                double expect = ntj[v] - joint;  // exact Pr(v | prefix, constraint)
                CHECK(fused[v] == doctest::Approx(expect).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("a vacuous constraint leaves the base LM untouched") {
    Rng rng(43);
    Hmm hmm = make_eos_absorbing(random_hmm(3, 4, 6, 3, rng.next_u64()));
    Cnf top = top_constraint(4);
    DpCache cache = DpCache::build(hmm, top);
    Corpus corpus = [&] {
        Rng r(5);
        std::vector<TokenSeq> seqs;
        for (int i = 0; i < 50; ++i) seqs.push_back(hmm.sample_sequence(r));
        return make_corpus(std::move(seqs), 6, 3, 4);
    }();
    NgramLm lm = NgramLm::fit(corpus, 2, 0.1);
    DecodeConfig cfg;
    GenerationState state = cache.initial_state();
    cache.advance_state(state, 1);
    std::vector<double> fused = fused_next(cfg, cache, state, lm);
    std::vector<double> bare = lm.next_logprobs({1});
    for (Token v = 0; v < 4; ++v)
        CHECK(fused[v] == doctest::Approx(bare[v]).epsilon(1e-9));
}

TEST_CASE("supervised fusion at w near 1 is the HMM conditional") {
    Rng rng(44);
    InstanceParams p;
    Instance inst = random_instance(rng, p);
    DpCache cache = DpCache::build(inst.hmm, inst.cnf);
    HmmLm lm(inst.hmm);
    DecodeConfig cfg;
    cfg.mode = FusionMode::kSupervised;
    cfg.weight = 1.0 - 1e-9;
    GenerationState state = cache.initial_state();
    std::vector<double> fused = fused_next(cfg, cache, state, lm);
    std::vector<double> ntj = cache.next_token_joint(state);
    double joint = cache.joint_with_constraint(state);
    double norm = kNegInf;
    for (Token v = 0; v < p.vocab; ++v)
        if (ntj[v] != kNegInf) norm = log_add(norm, ntj[v] - joint);
    for (Token v = 0; v < p.vocab; ++v) {
        if (ntj[v] == kNegInf)
            CHECK(fused[v] == kNegInf);
        else
            CHECK(std::abs(fused[v] - (ntj[v] - joint - norm)) < 1e-6);
    }
}

TEST_CASE("fused vectors are normalized and propagate hard zeros") {
    Rng rng(45);
    InstanceParams p;
    for (int trial = 0; trial < 4; ++trial) {
        Instance inst = random_instance(rng, p);
        DpCache cache = DpCache::build(inst.hmm, inst.cnf);
        HmmLm lm(inst.hmm);
        for (FusionMode mode : {FusionMode::kUnsupervised, FusionMode::kSupervised}) {
            DecodeConfig cfg;
            cfg.mode = mode;
            cfg.weight = 0.3;
            GenerationState state = cache.initial_state();
            std::vector<double> fused = fused_next(cfg, cache, state, lm);
            std::vector<double> ntj = cache.next_token_joint(state);
            double mass = kNegInf;
            for (Token v = 0; v < p.vocab; ++v) {
                mass = log_add(mass, fused[v]);
                if (ntj[v] == kNegInf) CHECK(fused[v] == kNegInf);
            }
            CHECK(std::abs(mass) < 1e-9);
        }
    }
}

TEST_CASE("weight validation and infeasibility errors") {
    Hmm hmm = make_eos_absorbing(random_hmm(2, 4, 3, 3, 9));
    Cnf cnf = compile_clauses({{{0, 1, 0, 0}}}, 4);  // cannot fit in 3 slots
    DpCache cache = DpCache::build(hmm, cnf);
    HmmLm lm(hmm);
    DecodeConfig cfg;
    Rng rng(1);
    CHECK_THROWS_AS(sample_constrained(cfg, cache, lm, rng), InfeasibleError);
    CHECK_THROWS_AS(beam_search_constrained(cfg, cache, lm), InfeasibleError);
    cfg.mode = FusionMode::kSupervised;
    cfg.weight = 1.5;
    CHECK_THROWS_AS(fused_next(cfg, cache, cache.initial_state(), lm), InputError);
}

TEST_CASE("every constrained sample satisfies its constraint") {
    Rng rng(46);
    InstanceParams p;
    for (int trial = 0; trial < 10; ++trial) {
        Instance inst = random_instance(rng, p);
        DpCache cache = DpCache::build(inst.hmm, inst.cnf);
        HmmLm lm(inst.hmm);
        DecodeConfig cfg;
        cfg.mode = trial % 2 ? FusionMode::kSupervised : FusionMode::kUnsupervised;
        Rng sampler(rng.next_u64());
        for (int i = 0; i < 20; ++i) {
            GenOutput out = sample_constrained(cfg, cache, lm, sampler);
            CHECK(inst.cnf.satisfies(out.tokens, inst.hmm.eos_token()));
        }
    }
}

TEST_CASE("a forced token is emitted at the last feasible slot") {
    // two slots, the clause needs [0, 1] => the sampler has no choice
    Hmm hmm = make_eos_absorbing(random_hmm(2, 4, 2, 3, 10));
    Cnf cnf = compile_clauses({{{0, 1}}}, 4);
    DpCache cache = DpCache::build(hmm, cnf);
    HmmLm lm(hmm);
    DecodeConfig cfg;
    Rng rng(3);
    GenOutput out = sample_constrained(cfg, cache, lm, rng);
    CHECK(out.tokens == TokenSeq{0, 1});
}

TEST_CASE("sampling frequencies follow the fused chain probabilities") {
    // tiny self-fusion instance: chain probability equals Pr(x | constraint)
    Hmm hmm = make_eos_absorbing(random_hmm(2, 3, 4, 2, 11));
    Cnf cnf = compile_clauses({{{0}}}, 3);
    DpCache cache = DpCache::build(hmm, cnf);
    HmmLm lm(hmm);
    DecodeConfig cfg;
    Rng rng(12);
    const int trials = 100000;
    std::map<TokenSeq, double> freq;
    for (int i = 0; i < trials; ++i)
        freq[sample_constrained(cfg, cache, lm, rng).tokens] += 1.0 / trials;
    double pr_alpha = brute_joint(hmm, cnf, {});
    for (const auto& [seq, f] : freq) {
        if (f < 0.01) continue;
        double expect = std::exp(brute_joint(hmm, cnf, seq) - pr_alpha);
        CHECK(std::abs(f - expect) < 0.015);
    }
}

TEST_CASE("the fused chain reproduces the exact conditional sequence probability") {
    Rng rng(47);
    InstanceParams p;
    for (int trial = 0; trial < 5; ++trial) {
        Instance inst = random_instance(rng, p);
        DpCache cache = DpCache::build(inst.hmm, inst.cnf);
        HmmLm lm(inst.hmm);
        DecodeConfig cfg;
        Rng sampler(rng.next_u64());
        GenOutput out = sample_constrained(cfg, cache, lm, sampler);
        double expect =
            brute_joint(inst.hmm, inst.cnf, out.tokens) - brute_joint(inst.hmm, inst.cnf, {});
        CHECK(std::abs(out.fused_ll - expect) < 1e-7);
    }
}

TEST_CASE("beam size one is greedy argmax decoding") {
    Rng rng(48);
    InstanceParams p;
    Instance inst = random_instance(rng, p);
    DpCache cache = DpCache::build(inst.hmm, inst.cnf);
    HmmLm lm(inst.hmm);
    DecodeConfig cfg;
    cfg.strategy = Strategy::kBeam;
    cfg.beam_size = 1;
    std::vector<GenOutput> beams = beam_search_constrained(cfg, cache, lm);
    REQUIRE(beams.size() == 1);

    // replay greedily: argmax of each fused step, smaller token id on ties
    GenerationState state = cache.initial_state();
    TokenSeq greedy;
    const Token eos = inst.hmm.eos_token();
    while (static_cast<int>(greedy.size()) < cache.horizon()) {
        std::vector<double> fused = fused_next(cfg, cache, state, lm);
        Token best = 0;
        double best_score = kNegInf;
        for (Token v = 0; v < p.vocab; ++v)
            if (fused[v] > best_score) {
                best_score = fused[v];
                best = v;
            }
        greedy.push_back(best);
        cache.advance_state(state, best);
        if (best == eos) break;
    }
    CHECK(beams[0].tokens == greedy);
}

TEST_CASE("a full-width beam finds the true argmax of the fused chain") {
    Hmm hmm = make_eos_absorbing(random_hmm(2, 3, 4, 2, 13));
    Cnf cnf = compile_clauses({{{0}, {1, 1}}}, 3);
    DpCache cache = DpCache::build(hmm, cnf);
    HmmLm lm(hmm);
    DecodeConfig cfg;
    cfg.strategy = Strategy::kBeam;
    cfg.beam_size = 81;  // covers every path of the V=3, n=4 instance
    std::vector<GenOutput> beams = beam_search_constrained(cfg, cache, lm);
    REQUIRE(!beams.empty());

    // enumerate all sequences the sampler could emit and score their chains
    double best = kNegInf;
    std::function<void(GenerationState, double)> walk = [&](GenerationState state,
                                                            double chain) {
        int t = static_cast<int>(state.prefix.size());
        bool done = t == cache.horizon() ||
                    (!state.prefix.empty() && state.prefix.back() == 2);
        if (done) {
            best = std::max(best, chain);
            return;
        }
        std::vector<double> fused = fused_next(cfg, cache, state, lm);
        for (Token v = 0; v < 3; ++v) {
            if (fused[v] == kNegInf) continue;
            GenerationState next = state;
            cache.advance_state(next, v);
            walk(std::move(next), chain + fused[v]);
        }
    };
    walk(cache.initial_state(), 0.0);
    CHECK(beams[0].fused_ll == doctest::Approx(best).epsilon(1e-9));
}

TEST_CASE("an exhaustive beam dominates every narrower beam") {
    // Widening the beam is not monotone step to step (a wider beam can crowd
    // out the greedy path mid-search), but the exhaustive width bounds the
    // top score of every narrower run, and satisfaction holds at any width.
    Rng rng(49);
    InstanceParams p;
    p.vocab = 4;
    p.max_len = 5;
    for (int trial = 0; trial < 4; ++trial) {
        Instance inst = random_instance(rng, p);
        DpCache cache = DpCache::build(inst.hmm, inst.cnf);
        HmmLm lm(inst.hmm);
        DecodeConfig cfg;
        cfg.strategy = Strategy::kBeam;
        cfg.beam_size = 1024;  // >= V^n: nothing is ever pruned
        double exhaustive = beam_search_constrained(cfg, cache, lm)[0].fused_ll;
        for (int width : {1, 2, 4, 8}) {
            cfg.beam_size = width;
            std::vector<GenOutput> beams = beam_search_constrained(cfg, cache, lm);
            REQUIRE(!beams.empty());
            CHECK(beams[0].fused_ll <= exhaustive + 1e-10);
            for (const GenOutput& b : beams)
                CHECK(inst.cnf.satisfies(b.tokens, inst.hmm.eos_token()));
        }
    }
}

TEST_CASE("re-ranking sorts by base-LM likelihood, stably") {
    std::vector<GenOutput> beams = {
        {{0}, -1.0, -2.0}, {{1}, -2.0, -1.0}, {{2}, -3.0, -2.0}};
    std::vector<GenOutput> ranked = rerank_by_lm(beams);
    CHECK(ranked[0].tokens == TokenSeq{1});
    CHECK(ranked[1].tokens == TokenSeq{0});  // tie with {2}: search order kept
    CHECK(ranked[2].tokens == TokenSeq{2});
    CHECK(rerank_by_lm({beams[0]}).size() == 1);
    CHECK_THROWS_AS(rerank_by_lm({}), InputError);
}

TEST_CASE("reported LM scores match an independent rescoring pass") {
    Rng rng(50);
    InstanceParams p;
    Instance inst = random_instance(rng, p);
    DpCache cache = DpCache::build(inst.hmm, inst.cnf);
    HmmLm lm(inst.hmm);
    DecodeConfig cfg;
    cfg.strategy = Strategy::kBeam;
    cfg.beam_size = 4;
    for (const GenOutput& b : beam_search_constrained(cfg, cache, lm)) {
        double rescored = 0.0;
        TokenSeq prefix;
        for (Token v : b.tokens) {
            rescored += lm.next_logprobs(prefix)[v];
            prefix.push_back(v);
        }
        CHECK(b.lm_ll == doctest::Approx(rescored).epsilon(1e-10));
    }
}
