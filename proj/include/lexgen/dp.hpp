#pragma once

// Exact conditioning of an HMM on a CNF lexical constraint. The cache holds
// log Pr(suffix placed at l, pending clauses satisfiable over X_{l:n} | z_l)
// for every position, keystring suffix (or none), pending-clause row, and
// hidden state, filled backward from the horizon. Generation-time queries
// assemble exact joints Pr(x_{1:t}, constraint) and full next-token vectors
// from cached entries plus the running forward vector.

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "lexgen/cnf.hpp"
#include "lexgen/hmm.hpp"

namespace lexgen {

// Decoding-time view of a partially generated sequence. `row` indexes the
// cache's pending-clause space and always reflects every keystring completed
// inside the prefix; `node` is the pending-match automaton state.
struct GenerationState {
    TokenSeq prefix;
    std::vector<double> forward;  // log Pr(x_{1:t}, z_t); empty at t = 0
    uint32_t row = 0;
    int node = 0;
};

class DpCache {
   public:
    // Unordered constraint: rows are all 2^m pending-clause masks.
    // horizon <= hmm.max_len() bounds the generation window (0 = max_len).
    static DpCache build(const Hmm& hmm, const Cnf& cnf, int horizon = 0,
                         int threads = 1);

    // Ordered variant: clauses must be satisfied in `order`; rows shrink to
    // the m+1 suffix sets of the ordered clause list (row = clauses done).
    static DpCache build_ordered(const Hmm& hmm, const Cnf& cnf,
                                 std::vector<int> order, int horizon = 0,
                                 int threads = 1);

    const Hmm& hmm() const { return hmm_; }
    const Cnf& cnf() const { return cnf_; }
    bool ordered() const { return ordered_; }
    const std::vector<int>& order() const { return order_; }
    int horizon() const { return horizon_; }
    int mask_count() const { return rows_; }

    // Cached log Pr(suffix sid at l..l+|s|-1, row satisfiable over X_{l:n} | z).
    // l ranges over [1, horizon+1]; row horizon+1 holds the base cases.
    double entry(int l, uint32_t row, int sid, int z) const {
        return table_[idx(l, row, sid, z)];
    }

    // Row algebra (uniform over the ordered and unordered variants).
    uint32_t initial_row() const { return ordered_ ? 0 : cnf_.full_mask(); }
    bool row_satisfied(uint32_t row) const {
        return ordered_ ? row == static_cast<uint32_t>(cnf_.num_clauses()) : row == 0;
    }
    uint32_t reduce_row(uint32_t row, ClauseMask completed) const;
    bool relevant(uint32_t row, ClauseMask clauses) const {
        return (clauses & filter_mask(row)) != 0;
    }
    std::vector<int> pending_clauses(uint32_t row) const;

    GenerationState initial_state() const;
    void advance_state(GenerationState& state, Token v) const;

    // Exact log Pr(x_{1:t}, constraint over X_{1:horizon}); -inf iff the
    // constraint is unsatisfiable given the prefix.
    double joint_with_constraint(const GenerationState& state) const;

    // V-vector of log Pr(x_{1:t}, X_{t+1} = v, constraint); horizon error at
    // t = horizon. Neutral tokens share one bucketed matrix-vector product.
    std::vector<double> next_token_joint(const GenerationState& state) const;

    void dump_csv(std::ostream& out) const;

    // Consistency check for tests: recomputes the state from its prefix.
    bool state_consistent(const GenerationState& state) const;

   private:
    DpCache(const Hmm& hmm, const Cnf& cnf, int horizon, bool ordered,
            std::vector<int> order);

    size_t idx(int l, uint32_t row, int sid, int z) const {
        return ((static_cast<size_t>(l - 1) * rows_ + row) * nsuffix_ + sid) * h_ + z;
    }
    size_t bucket_idx(int l, uint32_t row, int z) const {
        return (static_cast<size_t>(l - 1) * rows_ + row) * h_ + z;
    }
    ClauseMask filter_mask(uint32_t row) const;
    void fill(int threads);
    // log-space inclusion-exclusion over a node's relevant continuations,
    // evaluated against table position tau.
    void bracket(int tau, uint32_t row, const AcNode& node,
                 std::vector<double>& out) const;
    // Folds the bracket through one transition step; reuses the bucket table
    // when no continuation applies.
    std::vector<double> folded_bracket(int l, uint32_t row, const AcNode& node) const;

    Hmm hmm_;
    Cnf cnf_;
    int h_;
    int vocab_;
    int horizon_;
    bool ordered_;
    std::vector<int> order_;
    uint32_t rows_;
    int nsuffix_;
    std::vector<double> table_;        // (horizon+1) x rows x suffixes x h
    std::vector<double> bucket_;       // horizon x rows x h: transition-folded empty-suffix column
    std::vector<double> group_mass_;   // groups x h: log emission mass per token group
    std::vector<double> neutral_mass_; // rows x h
    std::vector<double> suffix_mat_;   // suffixes x h x h: log Pr(s spans, z_out | z_in)
};

}  // namespace lexgen
