#include "lexgen/train.hpp"

#include <algorithm>
#include <cmath>

#include "lexgen/errors.hpp"
#include "lexgen/logspace.hpp"
#include "lexgen/parallel.hpp"

namespace lexgen {

namespace {

struct Counts {
    std::vector<double> init;
    std::vector<double> trans;
    std::vector<double> emis;
    double ll = 0.0;

    Counts(int h, int vocab)
        : init(h, 0.0),
          trans(static_cast<size_t>(h) * h, 0.0),
          emis(static_cast<size_t>(h) * vocab, 0.0) {}

    void add(const Counts& o) {
        for (size_t i = 0; i < init.size(); ++i) init[i] += o.init[i];
        for (size_t i = 0; i < trans.size(); ++i) trans[i] += o.trans[i];
        for (size_t i = 0; i < emis.size(); ++i) emis[i] += o.emis[i];
        ll += o.ll;
    }
};

void accumulate_sequence(const Hmm& hmm, const TokenSeq& seq, Counts& c) {
    const int h = hmm.num_states();
    const int n = static_cast<int>(seq.size());
    std::vector<std::vector<double>> alpha(n), beta(n);
    std::vector<double> fwd;
    for (int t = 0; t < n; ++t) {
        fwd = hmm.forward_step(fwd, seq[t]);
        alpha[t] = fwd;
    }
    double ll = log_sum_exp(alpha[n - 1]);
    if (ll == kNegInf)
        throw InputError("corpus sequence has zero probability under the model");
    beta[n - 1].assign(h, 0.0);
    for (int t = n - 2; t >= 0; --t) {
        beta[t].assign(h, kNegInf);
        for (int z = 0; z < h; ++z) {
            double acc = kNegInf;
            for (int z2 = 0; z2 < h; ++z2)
                acc = log_add(acc, hmm.transition(z, z2) +
                                       hmm.emission(z2, seq[t + 1]) + beta[t + 1][z2]);
            beta[t][z] = acc;
        }
    }
    for (int t = 0; t < n; ++t) {
        for (int z = 0; z < h; ++z) {
            double g = alpha[t][z] + beta[t][z] - ll;
            if (g == kNegInf) continue;
            double w = std::exp(g);
            if (t == 0) c.init[z] += w;
            c.emis[static_cast<size_t>(z) * hmm.vocab_size() + seq[t]] += w;
        }
    }
    for (int t = 0; t + 1 < n; ++t) {
        for (int z = 0; z < h; ++z) {
            if (alpha[t][z] == kNegInf) continue;
            for (int z2 = 0; z2 < h; ++z2) {
                double x = alpha[t][z] + hmm.transition(z, z2) +
                           hmm.emission(z2, seq[t + 1]) + beta[t + 1][z2] - ll;
                if (x == kNegInf) continue;
                c.trans[static_cast<size_t>(z) * h + z2] += std::exp(x);
            }
        }
    }
    c.ll += ll;
}

// counts + pseudocount -> normalized log row; zero-mass rows keep `fallback`
void normalize_row(std::span<const double> counts, double smoothing,
                   std::span<const double> fallback, std::span<double> out,
                   std::span<const char> allowed) {
    double total = 0.0;
    for (size_t i = 0; i < counts.size(); ++i)
        if (allowed[i]) total += counts[i] + smoothing;
    if (total <= 0.0) {
        std::copy(fallback.begin(), fallback.end(), out.begin());
        return;
    }
    for (size_t i = 0; i < counts.size(); ++i)
        out[i] = allowed[i] && counts[i] + smoothing > 0.0
                     ? std::log((counts[i] + smoothing) / total)
                     : kNegInf;
}

Counts expected_counts(const Hmm& hmm, const Corpus& corpus, int threads) {
    const size_t nseq = corpus.sequences.size();
    size_t nthreads = std::max<size_t>(1, std::min<size_t>(threads, nseq));
    size_t chunk = (nseq + nthreads - 1) / nthreads;
    size_t nchunks = (nseq + chunk - 1) / chunk;
    std::vector<Counts> parts(nchunks, Counts(hmm.num_states(), hmm.vocab_size()));
    parallel_for(nchunks, static_cast<int>(nthreads), [&](size_t lo, size_t hi) {
        for (size_t ci = lo; ci < hi; ++ci) {
            size_t begin = ci * chunk;
            size_t end = std::min(nseq, begin + chunk);
            for (size_t i = begin; i < end; ++i)
                accumulate_sequence(hmm, corpus.sequences[i], parts[ci]);
        }
    });
    Counts total(hmm.num_states(), hmm.vocab_size());
    for (const Counts& p : parts) total.add(p);
    return total;
}

}  // namespace

std::pair<Hmm, double> em_step(const Hmm& hmm, const Corpus& corpus,
                               double smoothing, int threads) {
    if (corpus.sequences.empty()) throw InputError("em_step: empty corpus");
    if (corpus.vocab_size > hmm.vocab_size())
        throw InputError("em_step: corpus vocabulary exceeds the model's");
    if (corpus.max_len > hmm.max_len())
        throw InputError("em_step: corpus sequences longer than the model's max_len");
    if (smoothing < 0.0) throw InputError("em_step: smoothing must be nonnegative");

    const int h = hmm.num_states();
    const int vocab = hmm.vocab_size();
    Counts c = expected_counts(hmm, corpus, threads);

    std::vector<int> absorbing = hmm.absorbing_states();
    std::vector<char> in_a(h, 0);
    for (int z : absorbing) in_a[z] = 1;

    std::vector<double> init(h), trans(static_cast<size_t>(h) * h),
        emis(static_cast<size_t>(h) * vocab);

    std::vector<char> all_states(h, 1), all_tokens(vocab, 1);
    normalize_row(c.init, smoothing, hmm.initial_row(),
                  std::span<double>(init.data(), h), all_states);

    // Outside an absorbing structure every row is free; inside it, absorbing
    // states stay pinned to EOS/self and EOS stays unemittable elsewhere.
    std::vector<char> non_eos(vocab, 1);
    if (!absorbing.empty()) non_eos[hmm.eos_token()] = 0;
    std::vector<char> only_a(h, 0);
    for (int z : absorbing) only_a[z] = 1;

    for (int z = 0; z < h; ++z) {
        std::span<const double> tcounts(c.trans.data() + static_cast<size_t>(z) * h, h);
        std::span<double> trow(trans.data() + static_cast<size_t>(z) * h, h);
        std::span<const double> ecounts(c.emis.data() + static_cast<size_t>(z) * vocab,
                                        vocab);
        std::span<double> erow(emis.data() + static_cast<size_t>(z) * vocab, vocab);
        if (in_a[z]) {
            for (int v = 0; v < vocab; ++v)
                erow[v] = v == hmm.eos_token() ? 0.0 : kNegInf;
            normalize_row(tcounts, smoothing, hmm.transition_row(z), trow, only_a);
        } else {
            normalize_row(ecounts, smoothing, hmm.emission_row(z), erow,
                          absorbing.empty() ? all_tokens : non_eos);
            normalize_row(tcounts, smoothing, hmm.transition_row(z), trow, all_states);
        }
    }

    Hmm updated(h, vocab, hmm.max_len(), hmm.eos_token(), std::move(init),
                std::move(trans), std::move(emis));
    double avg_ll = c.ll / static_cast<double>(corpus.sequences.size());
    return {std::move(updated), avg_ll};
}

double corpus_loglik(const Hmm& hmm, const Corpus& corpus, int threads) {
    if (corpus.sequences.empty()) throw InputError("corpus_loglik: empty corpus");
    const size_t nseq = corpus.sequences.size();
    std::vector<double> lls(nseq);
    parallel_for(nseq, threads, [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i)
            lls[i] = hmm.prefix_logprob(corpus.sequences[i]);
    });
    double total = 0.0;
    for (double ll : lls) total += ll;
    return total / static_cast<double>(nseq);
}

namespace {

Corpus sample_corpus(BaseLm& teacher, Rng& rng, long long count, int max_len,
                     Token eos, int vocab_size) {
    std::vector<TokenSeq> seqs;
    seqs.reserve(count);
    for (long long i = 0; i < count; ++i) {
        TokenSeq s = teacher.sample(rng.next_u64(), max_len);
        if (s.size() > static_cast<size_t>(max_len))
            throw SourceError("teacher produced a sequence longer than max_len");
        for (Token v : s)
            if (v < 0 || v >= vocab_size)
                throw SourceError("teacher produced a token outside the vocabulary");
        // everything after the first EOS is padding
        auto it = std::find(s.begin(), s.end(), eos);
        if (it != s.end()) s.erase(it + 1, s.end());
        seqs.push_back(std::move(s));
    }
    return make_corpus(std::move(seqs), max_len, eos, vocab_size);
}

}  // namespace

DistillResult distill(BaseLm& teacher, const Hmm& student_init,
                      const TrainConfig& config) {
    if (config.epochs < 1) throw InputError("distill: epochs must be >= 1");
    if (config.samples_per_epoch < 1)
        throw InputError("distill: samples_per_epoch must be >= 1");
    if (config.heldout_samples < 1)
        throw InputError("distill: heldout_samples must be >= 1");
    if (teacher.vocab_size() != student_init.vocab_size())
        throw InputError("distill: teacher and student vocabularies differ");

    const int n = student_init.max_len();
    const Token eos = student_init.eos_token();
    const int vocab = student_init.vocab_size();

    Rng root(config.seed);
    Rng val_rng = root.fork(1);
    Rng train_rng = root.fork(2);

    Corpus heldout =
        sample_corpus(teacher, val_rng, config.heldout_samples, n, eos, vocab);

    DistillResult result{student_init, {}};
    Corpus corpus;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        if (config.resample_each_epoch || epoch == 1)
            corpus = sample_corpus(teacher, train_rng, config.samples_per_epoch, n,
                                   eos, vocab);
        auto [updated, train_ll] =
            em_step(result.model, corpus, config.smoothing, config.threads);
        result.model = std::move(updated);
        double heldout_ll = corpus_loglik(result.model, heldout, config.threads);
        result.trace.push_back({epoch, train_ll, heldout_ll});
    }
    return result;
}

}  // namespace lexgen
