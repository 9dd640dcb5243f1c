#pragma once

// CNF lexical constraints over token strings. A constraint is a conjunction
// of clauses; a clause is a disjunction of keystrings; a keystring is
// satisfied by occurring contiguously in the generated text. Compilation
// expands trailing separators, deduplicates keystrings and suffixes, builds
// the pending-match automaton, and rejects keystring sets whose overlap
// structure would make the conditioning recurrences inexact.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "lexgen/hmm.hpp"

namespace lexgen {

using ClauseMask = uint32_t;
constexpr int kDefaultClauseCap = 16;

// Raw parsed constraint, prior to compilation.
struct CnfSpec {
    std::vector<std::vector<TokenSeq>> clauses;
    std::vector<Token> separators;  // optional; expands each keystring w to w+sep
};

CnfSpec parse_constraint_json(std::istream& in);
CnfSpec load_constraint_file(const std::string& path);

struct OverlapViolation {
    enum Kind {
        kPrefixSuffix,  // nonempty prefix of a equals a suffix of b
        kSubstring,     // a occurs strictly inside b
        kSelfOverlap,   // a has a border of length >= 2
    };
    Kind kind;
    int a;
    int b;
    std::string detail;
};

struct OverlapReport {
    std::vector<OverlapViolation> violations;
    bool ok() const { return violations.empty(); }
    std::string to_string() const;
};

// Checks the deduplicated keystring set. All three violation kinds break the
// case analysis behind the constraint DP, so compile() treats any of them as
// a hard error.
OverlapReport validate_nonoverlap(const std::vector<TokenSeq>& keystrings);

// Pending continuation: appending suffix_string(suffix_id) to the current
// text completes keystring(keystring).
struct Split {
    int suffix_id;
    int keystring;
    ClauseMask clauses;
};

struct AcNode {
    int depth = 0;
    int fail = 0;
    std::vector<std::pair<Token, int>> edges;  // sorted by token
    ClauseMask completion = 0;    // clauses completed when the text ends here
    int completed_keystring = -1;
    std::vector<Split> splits;    // accumulated over the fail chain
};

class Cnf {
   public:
    static Cnf compile(const CnfSpec& spec, int vocab_size,
                       int clause_cap = kDefaultClauseCap);

    int num_clauses() const { return num_clauses_; }
    int vocab_size() const { return vocab_; }
    ClauseMask full_mask() const {
        return num_clauses_ == 32 ? ~ClauseMask(0) : (ClauseMask(1) << num_clauses_) - 1;
    }

    const std::vector<TokenSeq>& keystrings() const { return keystrings_; }
    ClauseMask keystring_clauses(int k) const { return keystring_clauses_[k]; }
    int min_keystring_len(int clause) const { return min_len_[clause]; }

    // Deduplicated proper suffixes of all keystrings; id 0 is the empty string.
    int num_suffixes() const { return static_cast<int>(suffixes_.size()); }
    const TokenSeq& suffix_string(int sid) const { return suffixes_[sid]; }
    int suffix_node(int sid) const { return suffix_nodes_[sid]; }

    // Pending-match automaton (prefix trie + failure links).
    const AcNode& node(int i) const { return nodes_[i]; }
    int num_nodes() const { return static_cast<int>(nodes_.size()); }
    int advance(int node, Token v) const;
    int node_for(const TokenSeq& x) const;
    const std::vector<std::pair<Token, int>>& starters() const { return nodes_[0].edges; }

    // Tokens grouped by the union of clauses their keystrings could touch;
    // group 0 is the fully neutral group.
    int group_of(Token v) const { return group_of_[v]; }
    const std::vector<ClauseMask>& group_masks() const { return group_masks_; }

    // All (continuation, keystring) pairs completing a keystring from a
    // nonempty suffix of x. Depends on x only through its longest partial
    // match, so the empty string (and any text ending in unrelated tokens)
    // has no continuations.
    std::vector<std::pair<TokenSeq, int>> suffix_continuations(const TokenSeq& x) const;

    // Clears every clause containing `completed`; input error if `completed`
    // is not a keystring of this constraint.
    ClauseMask reduce(ClauseMask mask, const TokenSeq& completed) const;

    // Clauses with a keystring occurrence ending at or before the first EOS.
    // Pass eos < 0 to scan the whole sequence.
    ClauseMask satisfied_clauses(const TokenSeq& seq, Token eos = -1) const;

    // True iff every clause is satisfied.
    bool satisfies(const TokenSeq& seq, Token eos = -1) const;

    // Ordered variant: clauses must be satisfiable by disjoint occurrences
    // appearing in the order given (a permutation of clause indices).
    bool satisfies_ordered(const TokenSeq& seq, const std::vector<int>& order,
                           Token eos = -1) const;

    // Normalized compiled form, for debugging.
    void dump_normalized(std::ostream& out) const;

   private:
    Cnf() = default;

    int vocab_ = 0;
    int num_clauses_ = 0;
    std::vector<TokenSeq> keystrings_;
    std::vector<ClauseMask> keystring_clauses_;
    std::vector<int> min_len_;  // per clause, shortest keystring
    std::vector<TokenSeq> suffixes_;
    std::vector<int> suffix_nodes_;
    std::vector<AcNode> nodes_;
    std::vector<int> group_of_;
    std::vector<ClauseMask> group_masks_;
};

}  // namespace lexgen
