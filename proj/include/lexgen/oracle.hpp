#pragma once

// Brute-force reference values and evaluation metrics. The enumeration walks
// completions in odometer order with incremental forward vectors, so it stays
// O(V^k h^2) and fast enough to run inside the test suite.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lexgen/cnf.hpp"
#include "lexgen/dp.hpp"
#include "lexgen/hmm.hpp"

namespace lexgen {

// log Pr(prefix, constraint satisfied over X_{1:horizon}) by exhaustive
// enumeration of all completions. Guarded at V^(horizon-t) <= 10^7.
double brute_joint(const Hmm& hmm, const Cnf& cnf, const TokenSeq& prefix,
                   int horizon = 0, int threads = 1);

// Ordered-keyword variant: occurrences must be disjoint and follow `order`.
double brute_joint_ordered(const Hmm& hmm, const Cnf& cnf,
                           const std::vector<int>& order, const TokenSeq& prefix,
                           int horizon = 0, int threads = 1);

// Mean fraction of clauses satisfied per (sequence, constraint) pair.
double coverage(std::span<const TokenSeq> sequences, std::span<const Cnf> cnfs,
                Token eos = -1);

// Fraction of sequences satisfying their constraint completely.
double success_rate(std::span<const TokenSeq> sequences, std::span<const Cnf> cnfs,
                    Token eos = -1);

struct OracleQuery {
    std::string kind;  // "joint" or "next_token"
    TokenSeq prefix;
    Token token = -1;  // set for next_token queries
    double exact = 0.0;
    double engine = 0.0;
    double abs_error = 0.0;
};

struct OracleReport {
    std::vector<OracleQuery> queries;
    double max_abs_error = 0.0;

    void add(OracleQuery q);
    void to_json(std::ostream& out) const;
};

// Compares joint_with_constraint (and optionally every next-token entry)
// against enumeration for one prefix.
OracleReport oracle_check(const DpCache& cache, const TokenSeq& prefix,
                          bool next_tokens, int threads = 1);

}  // namespace lexgen
