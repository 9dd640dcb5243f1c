#include "lexgen/oracle.hpp"

#include <bit>
#include <cmath>
#include <functional>
#include <ostream>

#include "lexgen/errors.hpp"
#include "lexgen/logspace.hpp"
#include "lexgen/parallel.hpp"
#include <json.hpp>

namespace lexgen {

namespace {

template <typename SatFn>
double enumerate_joint(const Hmm& hmm, const TokenSeq& prefix, int horizon,
                       int threads, const SatFn& satisfied) {
    const int vocab = hmm.vocab_size();
    const int t = static_cast<int>(prefix.size());
    if (t > horizon) throw InputError("brute_joint: prefix longer than horizon");
    const int k = horizon - t;
    if (k * std::log(static_cast<double>(vocab)) > std::log(1e7))
        throw InputError("brute_joint: completion space above the 10^7 guard");

    std::vector<double> base;  // forward vector after the prefix
    for (Token v : prefix) base = hmm.forward_step(base, v);

    TokenSeq seq = prefix;
    seq.resize(horizon);
    if (k == 0)
        return satisfied(seq) ? (t == 0 ? 0.0 : log_sum_exp(base)) : kNegInf;

    // depth-first over completions, sharded by the first completion token;
    // shard results merge in token order so any thread count matches exactly
    std::vector<double> shard(vocab, kNegInf);
    parallel_for(vocab, threads, [&](size_t lo, size_t hi) {
        TokenSeq local = seq;
        std::vector<std::vector<double>> stack(k);
        for (size_t first = lo; first < hi; ++first) {
            double acc = kNegInf;
            local[t] = static_cast<Token>(first);
            stack[0] = hmm.forward_step(base, local[t]);
            std::function<void(int)> walk = [&](int depth) {
                if (depth == k) {
                    if (satisfied(local)) acc = log_add(acc, log_sum_exp(stack[k - 1]));
                    return;
                }
                for (Token v = 0; v < vocab; ++v) {
                    local[t + depth] = v;
                    stack[depth] = hmm.forward_step(stack[depth - 1], v);
                    walk(depth + 1);
                }
            };
            walk(1);
            shard[first] = acc;
        }
    });
    double total = kNegInf;
    for (double s : shard) total = log_add(total, s);
    return total;
}

}  // namespace

double brute_joint(const Hmm& hmm, const Cnf& cnf, const TokenSeq& prefix,
                   int horizon, int threads) {
    if (horizon == 0) horizon = hmm.max_len();
    Token eos = hmm.eos_token();
    return enumerate_joint(hmm, prefix, horizon, threads,
                           [&](const TokenSeq& s) { return cnf.satisfies(s, eos); });
}

double brute_joint_ordered(const Hmm& hmm, const Cnf& cnf,
                           const std::vector<int>& order, const TokenSeq& prefix,
                           int horizon, int threads) {
    if (horizon == 0) horizon = hmm.max_len();
    Token eos = hmm.eos_token();
    return enumerate_joint(hmm, prefix, horizon, threads, [&](const TokenSeq& s) {
        return cnf.satisfies_ordered(s, order, eos);
    });
}

double coverage(std::span<const TokenSeq> sequences, std::span<const Cnf> cnfs,
                Token eos) {
    if (sequences.size() != cnfs.size())
        throw InputError("coverage: sequence and constraint lists differ in length");
    if (sequences.empty()) throw InputError("coverage: empty input");
    double total = 0.0;
    for (size_t i = 0; i < sequences.size(); ++i) {
        ClauseMask done = cnfs[i].satisfied_clauses(sequences[i], eos);
        total += static_cast<double>(std::popcount(done)) / cnfs[i].num_clauses();
    }
    return total / static_cast<double>(sequences.size());
}

double success_rate(std::span<const TokenSeq> sequences, std::span<const Cnf> cnfs,
                    Token eos) {
    if (sequences.size() != cnfs.size())
        throw InputError("success_rate: sequence and constraint lists differ in length");
    if (sequences.empty()) throw InputError("success_rate: empty input");
    double hits = 0.0;
    for (size_t i = 0; i < sequences.size(); ++i)
        if (cnfs[i].satisfies(sequences[i], eos)) hits += 1.0;
    return hits / static_cast<double>(sequences.size());
}

void OracleReport::add(OracleQuery q) {
    q.abs_error = std::abs(q.exact - q.engine);
    if (q.exact == kNegInf && q.engine == kNegInf) q.abs_error = 0.0;
    max_abs_error = std::max(max_abs_error, q.abs_error);
    queries.push_back(std::move(q));
}

void OracleReport::to_json(std::ostream& out) const {
    nlohmann::json j;
    j["max_abs_error"] = max_abs_error;
    nlohmann::json qs = nlohmann::json::array();
    for (const auto& q : queries) {
        nlohmann::json item;
        item["kind"] = q.kind;
        item["prefix"] = q.prefix;
        if (q.token >= 0) item["token"] = q.token;
        item["exact"] = q.exact;
        item["engine"] = q.engine;
        item["abs_error"] = q.abs_error;
        qs.push_back(std::move(item));
    }
    j["queries"] = std::move(qs);
    out << j.dump(2) << "\n";
}

OracleReport oracle_check(const DpCache& cache, const TokenSeq& prefix,
                          bool next_tokens, int threads) {
    const Hmm& hmm = cache.hmm();
    const Cnf& cnf = cache.cnf();
    OracleReport report;

    GenerationState state = cache.initial_state();
    for (Token v : prefix) cache.advance_state(state, v);

    auto exact_joint = [&](const TokenSeq& p) {
        return cache.ordered() ? brute_joint_ordered(hmm, cnf, cache.order(), p,
                                                     cache.horizon(), threads)
                               : brute_joint(hmm, cnf, p, cache.horizon(), threads);
    };

    OracleQuery q;
    q.kind = "joint";
    q.prefix = prefix;
    q.exact = exact_joint(prefix);
    q.engine = cache.joint_with_constraint(state);
    report.add(std::move(q));

    if (next_tokens && static_cast<int>(prefix.size()) < cache.horizon()) {
        std::vector<double> engine = cache.next_token_joint(state);
        for (Token v = 0; v < hmm.vocab_size(); ++v) {
            TokenSeq ext = prefix;
            ext.push_back(v);
            OracleQuery nq;
            nq.kind = "next_token";
            nq.prefix = prefix;
            nq.token = v;
            nq.exact = exact_joint(ext);
            nq.engine = engine[v];
            report.add(std::move(nq));
        }
    }
    return report;
}

}  // namespace lexgen
