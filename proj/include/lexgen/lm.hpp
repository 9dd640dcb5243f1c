#pragma once

// The base autoregressive model abstraction: anything that can score the next
// token given a prefix. Ships with a fixed-order n-gram model, an adapter that
// exposes an Hmm as a language model, and a bridge to an external process
// speaking a newline-delimited protocol.

#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "lexgen/corpus.hpp"
#include "lexgen/hmm.hpp"
#include "lexgen/rng.hpp"

namespace lexgen {

class BaseLm {
   public:
    virtual ~BaseLm() = default;
    virtual int vocab_size() const = 0;
    // Normalized log Pr(x_{t+1} = v | prefix) for every v.
    virtual std::vector<double> next_logprobs(const TokenSeq& prefix) = 0;
    // Ancestral sample of max_len tokens; deterministic given the seed.
    virtual TokenSeq sample(uint64_t seed, int max_len);
};

// Fixed-order k-gram conditionals with additive smoothing; contexts shorter
// than k-1 (sequence starts) condition on what is available.
class NgramLm : public BaseLm {
   public:
    NgramLm(int vocab_size, int order, double smoothing);

    static NgramLm fit(const Corpus& corpus, int order, double smoothing);

    int vocab_size() const override { return vocab_; }
    int order() const { return order_; }
    std::vector<double> next_logprobs(const TokenSeq& prefix) override;

    // Mean per-token log-likelihood over a corpus.
    double mean_token_loglik(const Corpus& corpus);

   private:
    void observe(const TokenSeq& seq);

    int vocab_;
    int order_;
    double smoothing_;
    std::map<TokenSeq, std::vector<double>> counts_;  // context -> per-token counts
};

// Exact next-token conditionals of an Hmm, computed from the forward vector.
class HmmLm : public BaseLm {
   public:
    explicit HmmLm(Hmm hmm) : hmm_(std::move(hmm)) {}

    int vocab_size() const override { return hmm_.vocab_size(); }
    std::vector<double> next_logprobs(const TokenSeq& prefix) override;
    const Hmm& hmm() const { return hmm_; }

   private:
    Hmm hmm_;
};

std::unique_ptr<BaseLm> hmm_as_lm(const Hmm& hmm);

// Bridges to a child process. Requests go over the child's stdin, one line
// per request; responses come back one line each:
//   "SCORE <id> <id> ..."   -> one line of V natural-log probabilities
//   "SAMPLE <seed> <maxlen>" -> one line of token ids
// Vectors whose exponentials drift from 1 by at most 1e-3 are renormalized;
// anything worse is rejected as a bridge error.
class ExternalLm : public BaseLm {
   public:
    ExternalLm(const std::string& command, int vocab_size);
    ~ExternalLm() override;

    ExternalLm(const ExternalLm&) = delete;
    ExternalLm& operator=(const ExternalLm&) = delete;

    int vocab_size() const override { return vocab_; }
    std::vector<double> next_logprobs(const TokenSeq& prefix) override;
    TokenSeq sample(uint64_t seed, int max_len) override;

   private:
    std::string request(const std::string& line);

    int vocab_;
    pid_t pid_ = -1;
    FILE* to_child_ = nullptr;
    FILE* from_child_ = nullptr;
    std::mutex io_mutex_;  // one in-flight request per child
};

// Serves a BaseLm over the line protocol; returns on end of input.
void serve_lm(BaseLm& lm, std::istream& in, std::ostream& out);

}  // namespace lexgen
