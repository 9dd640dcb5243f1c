#pragma once

// Fuses exact HMM constraint guidance with a base language model and drives
// autoregressive generation. Two fusion rules: the unsupervised product
// p ~ Pr_hmm(constraint | prefix+token) * Pr_lm(token | prefix), and the
// supervised weighted geometric mean of the two conditionals. Either way,
// tokens the guidance scores as impossible get probability exactly zero, so
// every emitted sequence satisfies the constraint.

#include <cstdint>
#include <vector>

#include "lexgen/dp.hpp"
#include "lexgen/lm.hpp"
#include "lexgen/rng.hpp"

namespace lexgen {

enum class FusionMode { kUnsupervised, kSupervised };
enum class Strategy { kSample, kBeam };

struct DecodeConfig {
    FusionMode mode = FusionMode::kUnsupervised;
    double weight = 0.3;  // supervised-mode exponent on the HMM conditional
    int beam_size = 1;
    int max_len = 0;  // 0: the cache horizon (must match it otherwise)
    uint64_t seed = 0;
    Strategy strategy = Strategy::kSample;
    int threads = 1;
};

// Normalized log p(x_{t+1} | prefix, constraint). Throws InfeasibleError
// naming the residual clauses if every token is impossible.
std::vector<double> fused_next(const DecodeConfig& cfg, const DpCache& cache,
                               const GenerationState& state, BaseLm& lm);

struct GenOutput {
    TokenSeq tokens;
    double fused_ll = 0.0;  // sum of fused step log-probabilities
    double lm_ll = 0.0;     // base-LM log-likelihood, used for re-ranking
};

// Ancestral sampling from the fused next-token law until EOS or the horizon.
// The result always satisfies the constraint.
GenOutput sample_constrained(const DecodeConfig& cfg, const DpCache& cache,
                             BaseLm& lm, Rng& rng);

// Beam search over fused log-scores. Ties break toward the smaller token id,
// then the earlier beam. Beams finalize at their first EOS or at the horizon;
// the result is ranked by fused score.
std::vector<GenOutput> beam_search_constrained(const DecodeConfig& cfg,
                                               const DpCache& cache, BaseLm& lm);

// Stable re-ordering by base-LM log-likelihood, best first.
std::vector<GenOutput> rerank_by_lm(std::vector<GenOutput> beams);

}  // namespace lexgen
