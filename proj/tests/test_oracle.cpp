#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "instancegen.hpp"
#include "lexgen/errors.hpp"
#include "lexgen/logspace.hpp"
#include "lexgen/oracle.hpp"

using namespace lexgen;
using testutil::Instance;
using testutil::InstanceParams;
using testutil::random_instance;
using testutil::random_prefix;

namespace {

// one clause containing every single token: satisfied by any nonempty text
Cnf top_constraint(int vocab) {
    std::vector<TokenSeq> ks;
    for (Token v = 0; v < vocab; ++v) ks.push_back({v});
    return Cnf::compile({{ks}, {}}, vocab);
}

Cnf compile_clauses(std::vector<std::vector<TokenSeq>> clauses, int vocab) {
    CnfSpec spec;
    spec.clauses = std::move(clauses);
    return Cnf::compile(spec, vocab);
}

}  // namespace

TEST_CASE("a vacuous constraint reduces brute_joint to the prefix probability") {
    Hmm hmm = make_eos_absorbing(random_hmm(3, 4, 6, 3, 51));
    Cnf top = top_constraint(4);
    for (const TokenSeq& prefix : {TokenSeq{}, TokenSeq{1}, TokenSeq{0, 2, 1}}) {
        double expect = prefix.empty() ? 0.0 : hmm.prefix_logprob(prefix);
        CHECK(brute_joint(hmm, top, prefix) == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("an oversized keystring is unsatisfiable") {
    Hmm hmm = make_eos_absorbing(random_hmm(2, 4, 3, 3, 52));
    Cnf cnf = compile_clauses({{{0, 0, 1, 1, 0}}}, 4);
    CHECK(brute_joint(hmm, cnf, {}) == kNegInf);
}

TEST_CASE("enumeration guard rejects oversized completion spaces") {
    Hmm hmm = make_eos_absorbing(random_hmm(2, 50, 6, 49, 53));
    Cnf cnf = compile_clauses({{{0}}}, 50);
    CHECK_THROWS_AS(brute_joint(hmm, cnf, {}), InputError);
}

TEST_CASE("sharded enumeration is identical for any thread count") {
    Rng rng(99);
    Instance inst = random_instance(rng, InstanceParams{});
    TokenSeq prefix = random_prefix(rng, InstanceParams{}, 2);
    CHECK(brute_joint(inst.hmm, inst.cnf, prefix, 0, 1) ==
          brute_joint(inst.hmm, inst.cnf, prefix, 0, 3));
}

TEST_CASE("coverage and success rate") {
    Cnf a = compile_clauses({{{1}}, {{2}}}, 5);  // two clauses
    Cnf b = compile_clauses({{{3}}}, 5);
    std::vector<Cnf> cnfs = {a, b};
    std::vector<TokenSeq> all_good = {{1, 2, 4}, {3, 4}};
    CHECK(coverage(all_good, cnfs, 4) == doctest::Approx(1.0));
    CHECK(success_rate(all_good, cnfs, 4) == doctest::Approx(1.0));

    std::vector<TokenSeq> half = {{1, 0, 0}, {0, 0}};  // first satisfies 1 of 2 clauses
    CHECK(coverage(half, cnfs, 4) == doctest::Approx(0.25));
    CHECK(success_rate(half, cnfs, 4) == doctest::Approx(0.0));

    std::vector<TokenSeq> one = {{1, 2}};
    CHECK_THROWS_AS(coverage(one, cnfs, 4), InputError);
    CHECK_THROWS_AS(success_rate(one, cnfs, 4), InputError);
}

TEST_CASE("randomized coverage matches a direct recount") {
    Rng rng(333);
    InstanceParams p;
    std::vector<Cnf> cnfs;
    std::vector<TokenSeq> seqs;
    for (int i = 0; i < 30; ++i) {
        Instance inst = random_instance(rng, p);
        cnfs.push_back(inst.cnf);
        seqs.push_back(inst.hmm.sample_sequence(rng.next_u64()));
    }
    double expect_cov = 0.0, expect_succ = 0.0;
    for (size_t i = 0; i < seqs.size(); ++i) {
        int m = cnfs[i].num_clauses();
        int hit = 0;
        for (int c = 0; c < m; ++c)
            if (cnfs[i].satisfied_clauses(seqs[i], p.vocab - 1) & (1u << c)) ++hit;
        expect_cov += static_cast<double>(hit) / m;
        if (hit == m) expect_succ += 1.0;
    }
    expect_cov /= seqs.size();
    expect_succ /= seqs.size();
    double cov = coverage(seqs, cnfs, p.vocab - 1);
    double succ = success_rate(seqs, cnfs, p.vocab - 1);
    CHECK(cov == doctest::Approx(expect_cov));
    CHECK(succ == doctest::Approx(expect_succ));
    CHECK(succ <= cov + 1e-12);
    CHECK(cov >= 0.0);
    CHECK(cov <= 1.0);
    CHECK(succ >= 0.0);
    CHECK(succ <= 1.0);
}

TEST_CASE("oracle_check compares the engine against enumeration") {
    Rng rng(444);
    InstanceParams p;
    p.vocab = 4;
    p.max_len = 6;
    Instance inst = random_instance(rng, p);
    DpCache cache = DpCache::build(inst.hmm, inst.cnf);
    OracleReport report = oracle_check(cache, {0, 1}, true);
    CHECK(report.queries.size() == 1u + 4u);
    CHECK(report.max_abs_error < 1e-8);
    std::ostringstream out;
    report.to_json(out);
    CHECK(out.str().find("max_abs_error") != std::string::npos);
    CHECK(out.str().find("next_token") != std::string::npos);
}
