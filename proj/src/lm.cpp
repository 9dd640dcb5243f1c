#include "lexgen/lm.hpp"

#include <csignal>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "lexgen/errors.hpp"
#include "lexgen/logspace.hpp"

namespace lexgen {

TokenSeq BaseLm::sample(uint64_t seed, int max_len) {
    Rng rng(seed);
    TokenSeq seq;
    seq.reserve(max_len);
    for (int t = 0; t < max_len; ++t) {
        std::vector<double> logp = next_logprobs(seq);
        seq.push_back(static_cast<Token>(rng.categorical_log(logp)));
    }
    return seq;
}

// --- NgramLm ----------------------------------------------------------------

NgramLm::NgramLm(int vocab_size, int order, double smoothing)
    : vocab_(vocab_size), order_(order), smoothing_(smoothing) {
    if (vocab_ < 1) throw InputError("n-gram vocab_size must be positive");
    if (order_ < 1) throw InputError("n-gram order must be >= 1");
    if (smoothing_ <= 0.0) throw InputError("n-gram smoothing must be positive");
}

void NgramLm::observe(const TokenSeq& seq) {
    for (size_t t = 0; t < seq.size(); ++t) {
        size_t ctx_len = std::min<size_t>(t, order_ - 1);
        TokenSeq ctx(seq.begin() + (t - ctx_len), seq.begin() + t);
        auto [it, inserted] = counts_.try_emplace(std::move(ctx));
        if (inserted) it->second.assign(vocab_, 0.0);
        it->second[seq[t]] += 1.0;
    }
}

NgramLm NgramLm::fit(const Corpus& corpus, int order, double smoothing) {
    if (corpus.sequences.empty()) throw InputError("n-gram fit: empty corpus");
    if (corpus.vocab_size < 1) throw InputError("n-gram fit: corpus lacks a vocab size");
    NgramLm lm(corpus.vocab_size, order, smoothing);
    for (const auto& seq : corpus.sequences) lm.observe(seq);
    return lm;
}

std::vector<double> NgramLm::next_logprobs(const TokenSeq& prefix) {
    size_t ctx_len = std::min<size_t>(prefix.size(), order_ - 1);
    TokenSeq ctx(prefix.end() - ctx_len, prefix.end());
    const std::vector<double>* counts = nullptr;
    auto it = counts_.find(ctx);
    if (it != counts_.end()) counts = &it->second;
    double total = smoothing_ * vocab_;
    if (counts)
        for (double c : *counts) total += c;
    std::vector<double> out(vocab_);
    for (Token v = 0; v < vocab_; ++v) {
        double c = smoothing_ + (counts ? (*counts)[v] : 0.0);
        out[v] = std::log(c / total);
    }
    return out;
}

double NgramLm::mean_token_loglik(const Corpus& corpus) {
    if (corpus.sequences.empty()) throw InputError("empty corpus");
    double total = 0.0;
    size_t tokens = 0;
    for (const auto& seq : corpus.sequences) {
        TokenSeq prefix;
        for (Token v : seq) {
            total += next_logprobs(prefix)[v];
            prefix.push_back(v);
            ++tokens;
        }
    }
    return total / static_cast<double>(tokens);
}

// --- HmmLm ------------------------------------------------------------------

std::vector<double> HmmLm::next_logprobs(const TokenSeq& prefix) {
    if (prefix.size() >= static_cast<size_t>(hmm_.max_len()))
        throw InputError("HmmLm: prefix already spans max_len");
    const int h = hmm_.num_states();
    std::vector<double> pre(h);
    if (prefix.empty()) {
        for (int z = 0; z < h; ++z) pre[z] = hmm_.initial(z);
    } else {
        std::vector<double> fwd;
        for (Token v : prefix) fwd = hmm_.forward_step(fwd, v);
        double norm = log_sum_exp(fwd);
        if (norm == kNegInf)
            throw InputError("HmmLm: prefix has zero probability under the model");
        for (int z2 = 0; z2 < h; ++z2) {
            double acc = kNegInf;
            for (int z = 0; z < h; ++z)
                acc = log_add(acc, fwd[z] + hmm_.transition(z, z2));
            pre[z2] = acc - norm;
        }
    }
    std::vector<double> out(hmm_.vocab_size());
    for (Token v = 0; v < hmm_.vocab_size(); ++v) {
        double acc = kNegInf;
        for (int z = 0; z < h; ++z) acc = log_add(acc, pre[z] + hmm_.emission(z, v));
        out[v] = acc;
    }
    return out;
}

std::unique_ptr<BaseLm> hmm_as_lm(const Hmm& hmm) {
    return std::make_unique<HmmLm>(hmm);
}

// --- ExternalLm -------------------------------------------------------------

ExternalLm::ExternalLm(const std::string& command, int vocab_size)
    : vocab_(vocab_size) {
    if (vocab_ < 1) throw InputError("ExternalLm: vocab_size must be positive");
    static bool sigpipe_ignored = [] {
        std::signal(SIGPIPE, SIG_IGN);
        return true;
    }();
    (void)sigpipe_ignored;

    int to_pipe[2], from_pipe[2];
    if (pipe(to_pipe) != 0 || pipe(from_pipe) != 0)
        throw SourceError("ExternalLm: pipe() failed");
    pid_ = fork();
    if (pid_ < 0) throw SourceError("ExternalLm: fork() failed");
    if (pid_ == 0) {
        dup2(to_pipe[0], STDIN_FILENO);
        dup2(from_pipe[1], STDOUT_FILENO);
        close(to_pipe[0]);
        close(to_pipe[1]);
        close(from_pipe[0]);
        close(from_pipe[1]);
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(to_pipe[0]);
    close(from_pipe[1]);
    to_child_ = fdopen(to_pipe[1], "w");
    from_child_ = fdopen(from_pipe[0], "r");
    if (!to_child_ || !from_child_) throw SourceError("ExternalLm: fdopen() failed");
}

ExternalLm::~ExternalLm() {
    if (to_child_) fclose(to_child_);
    if (from_child_) fclose(from_child_);
    if (pid_ > 0) waitpid(pid_, nullptr, 0);
}

std::string ExternalLm::request(const std::string& line) {
    std::lock_guard<std::mutex> lock(io_mutex_);
    if (fputs(line.c_str(), to_child_) == EOF || fputc('\n', to_child_) == EOF ||
        fflush(to_child_) != 0)
        throw SourceError("ExternalLm: child no longer accepts requests");
    char* buf = nullptr;
    size_t cap = 0;
    ssize_t len = getline(&buf, &cap, from_child_);
    if (len < 0) {
        free(buf);
        throw SourceError("ExternalLm: child closed the stream mid-request");
    }
    std::string out(buf, static_cast<size_t>(len));
    free(buf);
    while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
    return out;
}

std::vector<double> ExternalLm::next_logprobs(const TokenSeq& prefix) {
    std::ostringstream req;
    req << "SCORE";
    for (Token v : prefix) req << ' ' << v;
    std::string line = request(req.str());
    std::istringstream ls(line);
    std::vector<double> logp(vocab_);
    for (int v = 0; v < vocab_; ++v) {
        if (!(ls >> logp[v]))
            throw SourceError("ExternalLm: malformed score line: " + line);
    }
    double trailing;
    if (ls >> trailing)
        throw SourceError("ExternalLm: too many values in score line: " + line);
    double mass = 0.0;
    for (double lp : logp) mass += std::exp(lp);
    if (std::abs(mass - 1.0) > 1e-3)
        throw SourceError("ExternalLm: score line sums to " + std::to_string(mass) +
                          ", beyond the 1e-3 drift allowance");
    double shift = std::log(mass);
    for (double& lp : logp) lp -= shift;
    return logp;
}

TokenSeq ExternalLm::sample(uint64_t seed, int max_len) {
    std::string line =
        request("SAMPLE " + std::to_string(seed) + " " + std::to_string(max_len));
    std::istringstream ls(line);
    TokenSeq seq;
    long long v;
    while (ls >> v) {
        if (v < 0 || v >= vocab_)
            throw SourceError("ExternalLm: sampled token out of range: " + line);
        seq.push_back(static_cast<Token>(v));
    }
    if (!ls.eof()) throw SourceError("ExternalLm: malformed sample line: " + line);
    if (seq.size() > static_cast<size_t>(max_len))
        throw SourceError("ExternalLm: sample longer than requested");
    return seq;
}

// --- line-protocol server ----------------------------------------------------

void serve_lm(BaseLm& lm, std::istream& in, std::ostream& out) {
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string verb;
        ls >> verb;
        if (verb == "SCORE") {
            TokenSeq prefix;
            long long v;
            while (ls >> v) prefix.push_back(static_cast<Token>(v));
            std::vector<double> logp = lm.next_logprobs(prefix);
            char buf[32];
            for (size_t i = 0; i < logp.size(); ++i) {
                std::snprintf(buf, sizeof buf, "%.17g", logp[i]);
                if (i) out << ' ';
                out << buf;
            }
            out << '\n' << std::flush;
        } else if (verb == "SAMPLE") {
            uint64_t seed;
            int max_len;
            if (!(ls >> seed >> max_len))
                throw InputError("lm server: malformed SAMPLE request: " + line);
            TokenSeq seq = lm.sample(seed, max_len);
            for (size_t i = 0; i < seq.size(); ++i) {
                if (i) out << ' ';
                out << seq[i];
            }
            out << '\n' << std::flush;
        } else if (!verb.empty()) {
            throw InputError("lm server: unknown request: " + line);
        }
    }
}

}  // namespace lexgen
