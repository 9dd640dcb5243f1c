#include "lexgen/dp.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include "lexgen/errors.hpp"
#include "lexgen/logspace.hpp"
#include "lexgen/parallel.hpp"

namespace lexgen {

namespace {

// log Pr(tokens span consecutive positions, Z_out | Z_in): a chain of
// emission-scaled transition steps. Position-independent for a homogeneous
// chain, so one matrix per suffix serves every placement.
std::vector<double> span_matrix(const Hmm& hmm, const TokenSeq& tokens) {
    const int h = hmm.num_states();
    std::vector<double> m(static_cast<size_t>(h) * h);
    for (int z = 0; z < h; ++z)
        for (int z2 = 0; z2 < h; ++z2)
            m[z * h + z2] = hmm.emission(z, tokens[0]) + hmm.transition(z, z2);
    std::vector<double> next(static_cast<size_t>(h) * h);
    for (size_t k = 1; k < tokens.size(); ++k) {
        for (int z = 0; z < h; ++z) {
            for (int z2 = 0; z2 < h; ++z2) {
                double best = kNegInf;
                for (int mid = 0; mid < h; ++mid) {
                    double v = m[z * h + mid] + hmm.emission(mid, tokens[k]) +
                               hmm.transition(mid, z2);
                    if (v > best) best = v;
                }
                if (best == kNegInf) {
                    next[z * h + z2] = kNegInf;
                    continue;
                }
                double s = 0.0;
                for (int mid = 0; mid < h; ++mid)
                    s += std::exp(m[z * h + mid] + hmm.emission(mid, tokens[k]) +
                                  hmm.transition(mid, z2) - best);
                next[z * h + z2] = best + std::log(s);
            }
        }
        m.swap(next);
    }
    return m;
}

}  // namespace

DpCache::DpCache(const Hmm& hmm, const Cnf& cnf, int horizon, bool ordered,
                 std::vector<int> order)
    : hmm_(hmm),
      cnf_(cnf),
      h_(hmm.num_states()),
      vocab_(hmm.vocab_size()),
      horizon_(horizon),
      ordered_(ordered),
      order_(std::move(order)) {
    rows_ = ordered_ ? static_cast<uint32_t>(cnf_.num_clauses()) + 1
                     : (cnf_.num_clauses() == 32 ? 0 : (1u << cnf_.num_clauses()));
    if (rows_ == 0) throw InputError("constraint cache: too many clauses for mask width");
    nsuffix_ = cnf_.num_suffixes();
}

ClauseMask DpCache::filter_mask(uint32_t row) const {
    if (!ordered_) return row;
    return row < static_cast<uint32_t>(cnf_.num_clauses())
               ? ClauseMask(1) << order_[row]
               : 0;
}

uint32_t DpCache::reduce_row(uint32_t row, ClauseMask completed) const {
    if (!ordered_) return row & ~completed;
    // one occurrence advances at most one step in the prescribed order
    if (row < static_cast<uint32_t>(cnf_.num_clauses()) &&
        ((completed >> order_[row]) & 1))
        return row + 1;
    return row;
}

std::vector<int> DpCache::pending_clauses(uint32_t row) const {
    std::vector<int> out;
    if (ordered_) {
        for (uint32_t k = row; k < static_cast<uint32_t>(cnf_.num_clauses()); ++k)
            out.push_back(order_[k]);
    } else {
        for (int c = 0; c < cnf_.num_clauses(); ++c)
            if (row & (ClauseMask(1) << c)) out.push_back(c);
    }
    return out;
}

namespace {

void check_build_inputs(const Hmm& hmm, const Cnf& cnf, int& horizon) {
    if (cnf.vocab_size() != hmm.vocab_size())
        throw InputError("constraint and model disagree on vocabulary size");
    if (horizon == 0) horizon = hmm.max_len();
    if (horizon < 1 || horizon > hmm.max_len())
        throw InputError("horizon must be in [1, max_len]");
    if (!hmm.has_eos_structure())
        throw InputError(
            "guidance model lacks the EOS-absorbing structure; without it, "
            "occurrences behind the first EOS would count toward satisfaction "
            "(run make_eos_absorbing on the model first)");
    for (const TokenSeq& w : cnf.keystrings())
        for (size_t i = 0; i + 1 < w.size(); ++i)
            if (w[i] == hmm.eos_token())
                throw InputError(
                    "keystring has EOS at a non-final position; such an occurrence "
                    "could never sit inside generated text");
}

}  // namespace

DpCache DpCache::build(const Hmm& hmm, const Cnf& cnf, int horizon, int threads) {
    check_build_inputs(hmm, cnf, horizon);
    DpCache cache(hmm, cnf, horizon, false, {});
    cache.fill(threads);
    return cache;
}

DpCache DpCache::build_ordered(const Hmm& hmm, const Cnf& cnf, std::vector<int> order,
                               int horizon, int threads) {
    check_build_inputs(hmm, cnf, horizon);
    if (order.size() != static_cast<size_t>(cnf.num_clauses()))
        throw InputError("clause order must list every clause exactly once");
    std::vector<bool> seen(cnf.num_clauses(), false);
    for (int c : order) {
        if (c < 0 || c >= cnf.num_clauses() || seen[c])
            throw InputError("clause order must be a permutation of clause indices");
        seen[c] = true;
    }
    DpCache cache(hmm, cnf, horizon, true, std::move(order));
    cache.fill(threads);
    return cache;
}

void DpCache::bracket(int tau, uint32_t row, const AcNode& node,
                      std::vector<double>& out) const {
    out.resize(h_);
    const double* base = &table_[idx(tau, row, 0, 0)];

    // gather the relevant continuations once
    struct Term {
        const double* plus;
        const double* minus;
    };
    std::vector<Term> terms;
    for (const Split& s : node.splits) {
        if (!relevant(row, s.clauses)) continue;
        uint32_t prow = reduce_row(row, s.clauses);
        terms.push_back({&table_[idx(tau, prow, s.suffix_id, 0)],
                         &table_[idx(tau, row, s.suffix_id, 0)]});
    }
    for (int z = 0; z < h_; ++z) {
        double m = base[z];
        for (const Term& t : terms) {
            m = std::max(m, t.plus[z]);
            m = std::max(m, t.minus[z]);
        }
        if (m == kNegInf) {
            out[z] = kNegInf;
            continue;
        }
        double s = base[z] == kNegInf ? 0.0 : std::exp(base[z] - m);
        for (const Term& t : terms) {
            if (t.plus[z] != kNegInf) s += std::exp(t.plus[z] - m);
            if (t.minus[z] != kNegInf) s -= std::exp(t.minus[z] - m);
        }
        if (s <= 0.0) {
            if (s < -1e-12)
                throw InternalError("constraint bracket produced negative mass");
            out[z] = kNegInf;
            continue;
        }
        out[z] = m + std::log(s);
    }
}

std::vector<double> DpCache::folded_bracket(int l, uint32_t row,
                                            const AcNode& node) const {
    bool any = false;
    for (const Split& s : node.splits)
        if (relevant(row, s.clauses)) {
            any = true;
            break;
        }
    std::vector<double> out(h_);
    if (!any) {
        const double* b = &bucket_[bucket_idx(l, row, 0)];
        std::copy(b, b + h_, out.begin());
        return out;
    }
    std::vector<double> br;
    bracket(l + 1, row, node, br);
    log_matvec(hmm_.transition_matrix(), br, out);
    return out;
}

void DpCache::fill(int threads) {
    const size_t total =
        static_cast<size_t>(horizon_ + 1) * rows_ * nsuffix_ * h_;
    if (total > (size_t(1) << 28))
        throw InputError("constraint cache would need " + std::to_string(total) +
                         " entries; reduce clauses, states or horizon");
    table_.assign(total, kNegInf);
    bucket_.assign(static_cast<size_t>(horizon_) * rows_ * h_, kNegInf);

    // emission mass per token group
    const auto& gmasks = cnf_.group_masks();
    group_mass_.assign(gmasks.size() * h_, kNegInf);
    for (int z = 0; z < h_; ++z)
        for (Token v = 0; v < vocab_; ++v) {
            double& slot = group_mass_[static_cast<size_t>(cnf_.group_of(v)) * h_ + z];
            slot = log_add(slot, hmm_.emission(z, v));
        }
    neutral_mass_.assign(static_cast<size_t>(rows_) * h_, kNegInf);
    for (uint32_t row = 0; row < rows_; ++row) {
        ClauseMask filter = filter_mask(row);
        for (size_t g = 0; g < gmasks.size(); ++g) {
            if (gmasks[g] & filter) continue;
            for (int z = 0; z < h_; ++z) {
                double& slot = neutral_mass_[static_cast<size_t>(row) * h_ + z];
                slot = log_add(slot, group_mass_[g * h_ + z]);
            }
        }
    }

    suffix_mat_.assign(static_cast<size_t>(nsuffix_) * h_ * h_, kNegInf);
    for (int sid = 1; sid < nsuffix_; ++sid) {
        auto m = span_matrix(hmm_, cnf_.suffix_string(sid));
        std::copy(m.begin(), m.end(), suffix_mat_.begin() + static_cast<size_t>(sid) * h_ * h_);
    }

    // horizon base cases: an empty window satisfies only the satisfied row
    for (uint32_t row = 0; row < rows_; ++row)
        if (row_satisfied(row))
            for (int z = 0; z < h_; ++z) table_[idx(horizon_ + 1, row, 0, z)] = 0.0;

    // starter tokens and the union of clauses they could ever touch
    struct Starter {
        Token token;
        int node;
        ClauseMask mask;
    };
    std::vector<Starter> starters;
    for (auto [tok, c] : cnf_.starters()) {
        ClauseMask m = cnf_.node(c).completion;
        for (const Split& s : cnf_.node(c).splits) m |= s.clauses;
        starters.push_back({tok, c, m});
    }

    for (int l = horizon_; l >= 1; --l) {
        // transition-folded empty-suffix column, reused by every row below
        parallel_for(rows_, threads, [&](size_t lo, size_t hi) {
            for (size_t row = lo; row < hi; ++row) {
                std::span<const double> src(&table_[idx(l + 1, row, 0, 0)],
                                            static_cast<size_t>(h_));
                std::span<double> dst(&bucket_[bucket_idx(l, row, 0)],
                                      static_cast<size_t>(h_));
                log_matvec(hmm_.transition_matrix(), src, dst);
            }
        });

        parallel_for(rows_, threads, [&](size_t lo, size_t hi) {
            std::vector<double> br, acc(h_), folded(h_);
            for (size_t rw = lo; rw < hi; ++rw) {
                uint32_t row = static_cast<uint32_t>(rw);
                // suffix placements ending within the horizon
                for (int sid = 1; sid < nsuffix_; ++sid) {
                    int len = static_cast<int>(cnf_.suffix_string(sid).size());
                    if (l + len - 1 > horizon_) continue;
                    bracket(l + len, row, cnf_.node(cnf_.suffix_node(sid)), br);
                    std::span<const double> mat(
                        &suffix_mat_[static_cast<size_t>(sid) * h_ * h_],
                        static_cast<size_t>(h_) * h_);
                    std::span<double> dst(&table_[idx(l, row, sid, 0)],
                                          static_cast<size_t>(h_));
                    log_matvec(mat, br, dst);
                }
                // empty suffix: one step over the vocabulary, bucketing the
                // tokens that cannot interact with the pending clauses
                double* dst = &table_[idx(l, row, 0, 0)];
                const double* nm = &neutral_mass_[static_cast<size_t>(row) * h_];
                const double* bk = &bucket_[bucket_idx(l, row, 0)];
                const ClauseMask filter = filter_mask(row);
                for (int z = 0; z < h_; ++z)
                    acc[z] = nm[z] == kNegInf || bk[z] == kNegInf ? kNegInf : nm[z] + bk[z];
                for (const Starter& st : starters) {
                    if ((st.mask & filter) == 0) continue;  // in the bucket
                    const AcNode& node = cnf_.node(st.node);
                    uint32_t row2 = reduce_row(row, node.completion);
                    bool any_split = false;
                    for (const Split& s : node.splits)
                        if (relevant(row2, s.clauses)) {
                            any_split = true;
                            break;
                        }
                    const double* uv;
                    if (any_split) {
                        bracket(l + 1, row2, node, br);
                        log_matvec(hmm_.transition_matrix(), br, folded);
                        uv = folded.data();
                    } else {
                        uv = &bucket_[bucket_idx(l, row2, 0)];
                    }
                    for (int z = 0; z < h_; ++z) {
                        double term = hmm_.emission(z, st.token) + uv[z];
                        acc[z] = log_add(acc[z], term);
                    }
                }
                for (int z = 0; z < h_; ++z) {
                    if (acc[z] > 1e-9)
                        throw InternalError("cache entry above log(1)");
                    dst[z] = std::min(acc[z], 0.0);
                }
            }
        });
    }
}

GenerationState DpCache::initial_state() const {
    GenerationState s;
    s.row = initial_row();
    s.node = 0;
    return s;
}

void DpCache::advance_state(GenerationState& state, Token v) const {
    if (state.prefix.size() >= static_cast<size_t>(horizon_))
        throw InputError("cannot advance a state past the horizon");
    state.forward = hmm_.forward_step(state.forward, v);
    state.prefix.push_back(v);
    state.node = cnf_.advance(state.node, v);
    state.row = reduce_row(state.row, cnf_.node(state.node).completion);
}

double DpCache::joint_with_constraint(const GenerationState& state) const {
    const int t = static_cast<int>(state.prefix.size());
    if (t > horizon_) throw InputError("prefix longer than horizon");
    if (t == 0) {
        double acc = kNegInf;
        for (int z = 0; z < h_; ++z)
            acc = log_add(acc, hmm_.initial(z) + entry(1, state.row, 0, z));
        return acc;
    }
    std::vector<double> g = folded_bracket(t, state.row, cnf_.node(state.node));
    double acc = kNegInf;
    for (int z = 0; z < h_; ++z) acc = log_add(acc, state.forward[z] + g[z]);
    return acc;
}

std::vector<double> DpCache::next_token_joint(const GenerationState& state) const {
    const int t = static_cast<int>(state.prefix.size());
    if (t >= horizon_)
        throw InputError("next_token_joint: prefix already spans the horizon");

    std::vector<double> pre(h_);
    if (t == 0) {
        for (int z = 0; z < h_; ++z) pre[z] = hmm_.initial(z);
    } else {
        for (int z2 = 0; z2 < h_; ++z2) {
            double m = kNegInf;
            for (int z = 0; z < h_; ++z)
                m = std::max(m, state.forward[z] + hmm_.transition(z, z2));
            if (m == kNegInf) {
                pre[z2] = kNegInf;
                continue;
            }
            double s = 0.0;
            for (int z = 0; z < h_; ++z)
                s += std::exp(state.forward[z] + hmm_.transition(z, z2) - m);
            pre[z2] = m + std::log(s);
        }
    }

    // neutral tokens: unchanged row, no pending match
    std::vector<double> out(vocab_, kNegInf);
    const double* bk = &bucket_[bucket_idx(t + 1, state.row, 0)];
    std::vector<double> q(h_);
    for (int z = 0; z < h_; ++z)
        q[z] = pre[z] == kNegInf || bk[z] == kNegInf ? kNegInf : pre[z] + bk[z];
    for (Token v = 0; v < vocab_; ++v) {
        double m = kNegInf;
        for (int z = 0; z < h_; ++z) {
            double val = q[z] + hmm_.emission(z, v);
            if (val > m) m = val;
        }
        if (m == kNegInf) continue;
        double s = 0.0;
        for (int z = 0; z < h_; ++z) s += std::exp(q[z] + hmm_.emission(z, v) - m);
        out[v] = m + std::log(s);
    }

    // tokens that extend or start a match get the exact per-token treatment
    std::vector<Token> active;
    for (int node = state.node;; node = cnf_.node(node).fail) {
        for (auto [tok, c] : cnf_.node(node).edges)
            if (std::find(active.begin(), active.end(), tok) == active.end())
                active.push_back(tok);
        if (node == 0) break;
    }
    std::map<std::pair<int, uint32_t>, std::vector<double>> memo;
    for (Token v : active) {
        int node2 = cnf_.advance(state.node, v);
        if (node2 == 0) continue;
        uint32_t row2 = reduce_row(state.row, cnf_.node(node2).completion);
        auto key = std::make_pair(node2, row2);
        auto it = memo.find(key);
        if (it == memo.end())
            it = memo.emplace(key, folded_bracket(t + 1, row2, cnf_.node(node2))).first;
        const std::vector<double>& g = it->second;
        double m = kNegInf;
        for (int z = 0; z < h_; ++z) {
            double val = pre[z] + hmm_.emission(z, v) + g[z];
            if (val > m) m = val;
        }
        if (m == kNegInf) {
            out[v] = kNegInf;
            continue;
        }
        double s = 0.0;
        for (int z = 0; z < h_; ++z)
            s += std::exp(pre[z] + hmm_.emission(z, v) + g[z] - m);
        out[v] = m + std::log(s);
    }
    return out;
}

bool DpCache::state_consistent(const GenerationState& state) const {
    GenerationState fresh = initial_state();
    for (Token v : state.prefix) advance_state(fresh, v);
    if (fresh.row != state.row || fresh.node != state.node) return false;
    if (fresh.forward.size() != state.forward.size()) return false;
    for (size_t i = 0; i < fresh.forward.size(); ++i) {
        double a = fresh.forward[i], b = state.forward[i];
        if (a == kNegInf && b == kNegInf) continue;
        if (std::abs(a - b) > 1e-9) return false;
    }
    return true;
}

void DpCache::dump_csv(std::ostream& out) const {
    out << "l,suffix,mask,z,logprob\n";
    for (int l = 1; l <= horizon_ + 1; ++l)
        for (uint32_t row = 0; row < rows_; ++row)
            for (int sid = 0; sid < nsuffix_; ++sid)
                for (int z = 0; z < h_; ++z)
                    out << l << ',' << sid << ',' << row << ',' << z << ','
                        << entry(l, row, sid, z) << '\n';
}

}  // namespace lexgen
