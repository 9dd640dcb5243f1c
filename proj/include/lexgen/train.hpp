#pragma once

// Maximum-likelihood fitting of HMM parameters with the EM algorithm, plus a
// distillation driver that trains a student HMM on samples drawn from a
// teacher model.

#include <cstdint>
#include <vector>

#include "lexgen/corpus.hpp"
#include "lexgen/hmm.hpp"
#include "lexgen/lm.hpp"

namespace lexgen {

struct TrainConfig {
    int epochs = 1;
    long long samples_per_epoch = 0;  // distillation corpus size
    bool resample_each_epoch = true;  // false: one corpus drawn up front
    long long heldout_samples = 1000;
    double smoothing = 1e-4;  // pseudocount added to every expected count
    uint64_t seed = 0;
    int threads = 1;
};

// One forward-backward re-estimation sweep. Returns the updated model and the
// pre-update mean per-sequence log-likelihood. When the input model is
// EOS-absorbing the structure is preserved by clamping the absorbing rows and
// keeping EOS unemittable elsewhere.
std::pair<Hmm, double> em_step(const Hmm& hmm, const Corpus& corpus,
                               double smoothing = 0.0, int threads = 1);

// Mean per-sequence log-likelihood of a corpus under a model.
double corpus_loglik(const Hmm& hmm, const Corpus& corpus, int threads = 1);

struct EpochMetric {
    int epoch = 0;          // 1-based
    double train_ll = 0.0;  // pre-update mean per-sequence ll on the epoch corpus
    double heldout_ll = 0.0;  // post-update mean per-sequence ll on the validation set
};

struct DistillResult {
    Hmm model;
    std::vector<EpochMetric> trace;
};

// Samples corpora from the teacher (sequences of length <= max_len, padded
// with EOS) and runs one EM sweep per epoch. The validation set is drawn once
// up front and scored after every epoch.
DistillResult distill(BaseLm& teacher, const Hmm& student_init,
                      const TrainConfig& config);

}  // namespace lexgen
