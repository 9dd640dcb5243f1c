#pragma once

// Homogeneous hidden Markov model over fixed-length token sequences, with an
// EOS-absorbing construction so that a length-n model represents all texts of
// length <= n. Parameters are stored dense, row-major, in natural log space.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lexgen/rng.hpp"

namespace lexgen {

using Token = int32_t;
using TokenSeq = std::vector<Token>;

// True iff no non-EOS token follows an EOS token.
bool eos_legal(const TokenSeq& seq, Token eos);

class Hmm {
   public:
    // Parameter vectors are log-probabilities: initial has h entries,
    // transition h*h (row = previous state), emission h*V (row = state).
    Hmm(int num_states, int vocab_size, int max_len, Token eos_token,
        std::vector<double> initial, std::vector<double> transition,
        std::vector<double> emission);

    int num_states() const { return h_; }
    int vocab_size() const { return vocab_; }
    int max_len() const { return n_; }
    Token eos_token() const { return eos_; }

    double initial(int z) const { return initial_[z]; }
    double transition(int zprev, int znext) const { return transition_[zprev * h_ + znext]; }
    double emission(int z, Token v) const { return emission_[z * vocab_ + v]; }

    std::span<const double> initial_row() const { return initial_; }
    std::span<const double> transition_row(int z) const {
        return {transition_.data() + z * h_, static_cast<size_t>(h_)};
    }
    std::span<const double> transition_matrix() const { return transition_; }
    std::span<const double> emission_row(int z) const {
        return {emission_.data() + z * vocab_, static_cast<size_t>(vocab_)};
    }

    // Throws InputError unless every row exponentiates and sums to 1 (1e-9).
    void validate() const;

    // States that emit EOS with probability 1 and are closed under transition,
    // with EOS unemittable elsewhere. Empty when the model lacks the structure.
    std::vector<int> absorbing_states() const;
    bool is_eos_absorbing() const { return !absorbing_states().empty(); }

    // True iff no positive-probability sequence resumes after an EOS: either
    // an absorbing set exists, or EOS is unemittable everywhere. Constraint
    // conditioning requires this, otherwise occurrences behind the first EOS
    // would count toward satisfaction.
    bool has_eos_structure() const;

    // log Pr(x_{1:t'}, Z_{t'} = z) for every position t' <= len(prefix);
    // result[t'-1] is the h-vector at position t'.
    std::vector<std::vector<double>> forward_pass(const TokenSeq& prefix) const;

    // One incremental forward step: given log Pr(x_{1:t}, z_t), returns the
    // vector for x_{1:t} + [v]. Pass an empty vector for t = 0.
    std::vector<double> forward_step(const std::vector<double>& fwd, Token v) const;

    // log Pr(x_{1:t}) = logsumexp over the final forward vector.
    double prefix_logprob(const TokenSeq& prefix) const;

    // Ancestral sample of length exactly n; deterministic for a given seed.
    TokenSeq sample_sequence(uint64_t seed) const;
    TokenSeq sample_sequence(Rng& rng) const;

    // Versioned JSON document with linear-space probabilities.
    void save_json(std::ostream& out) const;
    void save_json(const std::string& path) const;
    static Hmm load_json(std::istream& in);

    // "GLT1" binary format: little-endian u32 header fields, then row-major
    // f64 log-probability blocks. Round-trips bit-exactly.
    void save_binary(std::ostream& out) const;
    void save_binary(const std::string& path) const;
    static Hmm load_binary(std::istream& in);

    // Loads either format, sniffing the magic bytes.
    static Hmm load(const std::string& path);
    void save(const std::string& path) const;  // .json => JSON, else binary

   private:
    void check_token(Token v) const;

    int h_;
    int vocab_;
    int n_;
    Token eos_;
    std::vector<double> initial_;     // h
    std::vector<double> transition_;  // h*h
    std::vector<double> emission_;    // h*V
};

// Random model with Dirichlet(1) rows; not EOS-absorbing.
Hmm random_hmm(int num_states, int vocab_size, int max_len, Token eos_token,
               uint64_t seed);

// Rebuilds `hmm` so the EOS-absorbing invariant holds: the last state becomes
// the absorbing state (EOS emission 1, self-loop 1) and EOS mass is
// renormalized out of every other emission row. Requires h >= 2.
Hmm make_eos_absorbing(const Hmm& hmm);

}  // namespace lexgen
