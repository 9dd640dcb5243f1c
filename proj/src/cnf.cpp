#include "lexgen/cnf.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "lexgen/errors.hpp"
#include <json.hpp>

namespace lexgen {

namespace {

std::string seq_to_string(const TokenSeq& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(s[i]);
    }
    return out + "]";
}

bool is_prefix(const TokenSeq& p, const TokenSeq& w) {
    return p.size() <= w.size() && std::equal(p.begin(), p.end(), w.begin());
}

}  // namespace

CnfSpec parse_constraint_json(std::istream& in) {
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("constraint JSON parse error: ") + e.what());
    }
    CnfSpec spec;
    try {
        for (const auto& clause : j.at("clauses")) {
            std::vector<TokenSeq> ks;
            for (const auto& w : clause) ks.push_back(w.get<TokenSeq>());
            spec.clauses.push_back(std::move(ks));
        }
        if (j.contains("separators"))
            spec.separators = j["separators"].get<std::vector<Token>>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("constraint JSON schema error: ") + e.what());
    }
    return spec;
}

CnfSpec load_constraint_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open constraint file " + path);
    return parse_constraint_json(in);
}

std::string OverlapReport::to_string() const {
    std::ostringstream out;
    for (const auto& v : violations) out << v.detail << "\n";
    return out.str();
}

OverlapReport validate_nonoverlap(const std::vector<TokenSeq>& ks) {
    OverlapReport report;
    const int n = static_cast<int>(ks.size());
    for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) {
            if (a == b) continue;
            const TokenSeq& wa = ks[a];
            const TokenSeq& wb = ks[b];
            // nonempty prefix of wa equal to a suffix of wb
            size_t maxlen = std::min(wa.size(), wb.size());
            for (size_t len = 1; len <= maxlen; ++len) {
                if (std::equal(wa.begin(), wa.begin() + len, wb.end() - len)) {
                    report.violations.push_back(
                        {OverlapViolation::kPrefixSuffix, a, b,
                         "prefix of keystring " + seq_to_string(wa) +
                             " equals a suffix of " + seq_to_string(wb)});
                    break;
                }
            }
            // wa strictly inside wb (edge-touching cases are caught above)
            if (wa.size() + 2 <= wb.size()) {
                for (size_t p = 1; p + wa.size() < wb.size(); ++p) {
                    if (std::equal(wa.begin(), wa.end(), wb.begin() + p)) {
                        report.violations.push_back(
                            {OverlapViolation::kSubstring, a, b,
                             "keystring " + seq_to_string(wa) + " occurs inside " +
                                 seq_to_string(wb)});
                        break;
                    }
                }
            }
        }
        // A border of length >= 2 lets two partial matches of the same
        // keystring extend simultaneously, which breaks the disjointness of
        // the continuation case split. Borders of length 1 are harmless.
        const TokenSeq& w = ks[a];
        for (size_t len = 2; len + 1 <= w.size(); ++len) {
            if (std::equal(w.begin(), w.begin() + len, w.end() - len)) {
                report.violations.push_back(
                    {OverlapViolation::kSelfOverlap, a, a,
                     "keystring " + seq_to_string(w) + " overlaps itself (border length " +
                         std::to_string(len) + ")"});
                break;
            }
        }
    }
    return report;
}

Cnf Cnf::compile(const CnfSpec& spec, int vocab_size, int clause_cap) {
    if (clause_cap < 1 || clause_cap > 32)
        throw InputError("clause cap must be in [1, 32] (mask width)");
    if (spec.clauses.empty()) throw InputError("constraint has no clauses");
    if (static_cast<int>(spec.clauses.size()) > clause_cap)
        throw InputError("constraint has " + std::to_string(spec.clauses.size()) +
                         " clauses, over the cap of " + std::to_string(clause_cap) +
                         " (cost doubles per clause; raise the cap deliberately)");
    for (Token sep : spec.separators)
        if (sep < 0 || sep >= vocab_size)
            throw InputError("separator token out of range");

    Cnf cnf;
    cnf.vocab_ = vocab_size;
    cnf.num_clauses_ = static_cast<int>(spec.clauses.size());
    cnf.min_len_.assign(cnf.num_clauses_, 0);

    std::map<TokenSeq, int> index_of;
    for (int c = 0; c < cnf.num_clauses_; ++c) {
        const auto& clause = spec.clauses[c];
        if (clause.empty())
            throw InputError("clause " + std::to_string(c) + " has no keystrings");
        int min_len = -1;
        for (const TokenSeq& raw : clause) {
            if (raw.empty())
                throw InputError("clause " + std::to_string(c) + " has an empty keystring");
            for (Token v : raw)
                if (v < 0 || v >= vocab_size)
                    throw InputError("keystring token " + std::to_string(v) +
                                     " out of range in clause " + std::to_string(c));
            std::vector<TokenSeq> expanded;
            if (spec.separators.empty()) {
                expanded.push_back(raw);
            } else {
                for (Token sep : spec.separators) {
                    TokenSeq w = raw;
                    w.push_back(sep);
                    expanded.push_back(std::move(w));
                }
            }
            for (TokenSeq& w : expanded) {
                if (min_len < 0 || static_cast<int>(w.size()) < min_len)
                    min_len = static_cast<int>(w.size());
                auto [it, inserted] =
                    index_of.try_emplace(std::move(w), static_cast<int>(cnf.keystrings_.size()));
                if (inserted) {
                    cnf.keystrings_.push_back(it->first);
                    cnf.keystring_clauses_.push_back(0);
                }
                cnf.keystring_clauses_[it->second] |= ClauseMask(1) << c;
            }
        }
        cnf.min_len_[c] = min_len;
    }

    OverlapReport report = validate_nonoverlap(cnf.keystrings_);
    if (!report.ok())
        throw InputError("keystring set violates the non-overlap requirement:\n" +
                         report.to_string());

    // deduplicated proper suffixes, lexicographic for stable ids
    std::map<TokenSeq, int> suffix_ids;
    for (const TokenSeq& w : cnf.keystrings_)
        for (size_t d = 1; d < w.size(); ++d)
            suffix_ids.emplace(TokenSeq(w.begin() + d, w.end()), 0);
    cnf.suffixes_.push_back({});  // id 0: empty
    for (auto& [s, id] : suffix_ids) {
        id = static_cast<int>(cnf.suffixes_.size());
        cnf.suffixes_.push_back(s);
    }

    // prefix trie
    cnf.nodes_.emplace_back();
    auto child = [&](int node, Token v) -> int {
        for (auto& [tok, c] : cnf.nodes_[node].edges)
            if (tok == v) return c;
        return -1;
    };
    for (size_t k = 0; k < cnf.keystrings_.size(); ++k) {
        int node = 0;
        for (Token v : cnf.keystrings_[k]) {
            int c = child(node, v);
            if (c < 0) {
                c = static_cast<int>(cnf.nodes_.size());
                cnf.nodes_.emplace_back();
                cnf.nodes_.back().depth = cnf.nodes_[node].depth + 1;
                cnf.nodes_[node].edges.emplace_back(v, c);
                std::sort(cnf.nodes_[node].edges.begin(), cnf.nodes_[node].edges.end());
            }
            node = c;
        }
        cnf.nodes_[node].completion |= cnf.keystring_clauses_[k];
        cnf.nodes_[node].completed_keystring = static_cast<int>(k);
    }

    // direct splits: placing w[d:] after a text ending with w[0:d] completes w
    std::vector<std::vector<Split>> direct(cnf.nodes_.size());
    for (size_t k = 0; k < cnf.keystrings_.size(); ++k) {
        const TokenSeq& w = cnf.keystrings_[k];
        int node = 0;
        for (size_t d = 1; d < w.size(); ++d) {
            node = child(node, w[d - 1]);
            TokenSeq rest(w.begin() + d, w.end());
            direct[node].push_back({suffix_ids.at(rest), static_cast<int>(k),
                                    cnf.keystring_clauses_[k]});
        }
    }

    // failure links (BFS), then completions and splits folded over the chain
    std::deque<int> queue;
    for (auto& [tok, c] : cnf.nodes_[0].edges) {
        cnf.nodes_[c].fail = 0;
        queue.push_back(c);
    }
    while (!queue.empty()) {
        int v = queue.front();
        queue.pop_front();
        const AcNode& vn = cnf.nodes_[v];
        if (vn.completed_keystring < 0 && cnf.nodes_[vn.fail].completion) {
            cnf.nodes_[v].completion |= cnf.nodes_[vn.fail].completion;
            cnf.nodes_[v].completed_keystring = cnf.nodes_[vn.fail].completed_keystring;
        }
        cnf.nodes_[v].splits = direct[v];
        const auto& inherited = cnf.nodes_[cnf.nodes_[v].fail].splits;
        cnf.nodes_[v].splits.insert(cnf.nodes_[v].splits.end(), inherited.begin(),
                                    inherited.end());
        for (auto [tok, c] : cnf.nodes_[v].edges) {
            cnf.nodes_[c].fail = cnf.advance(cnf.nodes_[v].fail, tok);
            queue.push_back(c);
        }
    }

    // validated sets always yield prefix-free continuation sets; double-check
    for (const AcNode& node : cnf.nodes_) {
        for (size_t i = 0; i < node.splits.size(); ++i) {
            for (size_t j = 0; j < node.splits.size(); ++j) {
                if (i == j) continue;
                const TokenSeq& si = cnf.suffixes_[node.splits[i].suffix_id];
                const TokenSeq& sj = cnf.suffixes_[node.splits[j].suffix_id];
                if (si.size() < sj.size() && is_prefix(si, sj))
                    throw InternalError("continuation set is not prefix-free");
            }
        }
    }

    cnf.suffix_nodes_.assign(cnf.num_suffixes(), 0);
    for (int sid = 1; sid < cnf.num_suffixes(); ++sid)
        cnf.suffix_nodes_[sid] = cnf.node_for(cnf.suffixes_[sid]);

    // token groups for the neutral bucket
    cnf.group_of_.assign(vocab_size, 0);
    cnf.group_masks_.push_back(0);
    std::map<ClauseMask, int> group_ids;
    for (auto [tok, c] : cnf.nodes_[0].edges) {
        ClauseMask mask = cnf.nodes_[c].completion;
        for (const Split& s : cnf.nodes_[c].splits) mask |= s.clauses;
        auto [it, inserted] = group_ids.try_emplace(mask, static_cast<int>(cnf.group_masks_.size()));
        if (inserted) cnf.group_masks_.push_back(mask);
        cnf.group_of_[tok] = it->second;
    }
    return cnf;
}

int Cnf::advance(int node, Token v) const {
    while (true) {
        for (const auto& [tok, c] : nodes_[node].edges)
            if (tok == v) return c;
        if (node == 0) return 0;
        node = nodes_[node].fail;
    }
}

int Cnf::node_for(const TokenSeq& x) const {
    int node = 0;
    for (Token v : x) node = advance(node, v);
    return node;
}

std::vector<std::pair<TokenSeq, int>> Cnf::suffix_continuations(const TokenSeq& x) const {
    std::vector<std::pair<TokenSeq, int>> out;
    for (const Split& s : nodes_[node_for(x)].splits)
        out.emplace_back(suffixes_[s.suffix_id], s.keystring);
    return out;
}

ClauseMask Cnf::reduce(ClauseMask mask, const TokenSeq& completed) const {
    for (size_t k = 0; k < keystrings_.size(); ++k)
        if (keystrings_[k] == completed) return mask & ~keystring_clauses_[k];
    throw InputError("reduce: " + seq_to_string(completed) +
                     " is not a keystring of this constraint");
}

ClauseMask Cnf::satisfied_clauses(const TokenSeq& seq, Token eos) const {
    // occurrences must end at or before the first EOS
    size_t limit = seq.size();
    if (eos >= 0) {
        for (size_t i = 0; i < seq.size(); ++i) {
            if (seq[i] == eos) {
                limit = i + 1;
                break;
            }
        }
    }
    ClauseMask done = 0;
    for (size_t k = 0; k < keystrings_.size(); ++k) {
        if ((keystring_clauses_[k] & ~done) == 0) continue;
        const TokenSeq& w = keystrings_[k];
        if (w.size() > limit) continue;
        for (size_t p = 0; p + w.size() <= limit; ++p) {
            if (std::equal(w.begin(), w.end(), seq.begin() + p)) {
                done |= keystring_clauses_[k];
                break;
            }
        }
    }
    return done;
}

bool Cnf::satisfies(const TokenSeq& seq, Token eos) const {
    return satisfied_clauses(seq, eos) == full_mask();
}

bool Cnf::satisfies_ordered(const TokenSeq& seq, const std::vector<int>& order,
                            Token eos) const {
    if (order.size() != static_cast<size_t>(num_clauses_))
        throw InputError("order must cover every clause");
    size_t limit = seq.size();
    if (eos >= 0) {
        for (size_t i = 0; i < seq.size(); ++i) {
            if (seq[i] == eos) {
                limit = i + 1;
                break;
            }
        }
    }
    // exhaustive search over disjoint in-order occurrences
    std::function<bool(size_t, size_t)> from = [&](size_t pos, size_t k) -> bool {
        if (k == order.size()) return true;
        ClauseMask clause_bit = ClauseMask(1) << order[k];
        for (size_t ki = 0; ki < keystrings_.size(); ++ki) {
            if (!(keystring_clauses_[ki] & clause_bit)) continue;
            const TokenSeq& w = keystrings_[ki];
            for (size_t p = pos; p + w.size() <= limit; ++p) {
                if (std::equal(w.begin(), w.end(), seq.begin() + p) &&
                    from(p + w.size(), k + 1))
                    return true;
            }
        }
        return false;
    };
    return from(0, 0);
}

void Cnf::dump_normalized(std::ostream& out) const {
    nlohmann::json j;
    j["num_clauses"] = num_clauses_;
    nlohmann::json ks = nlohmann::json::array();
    for (size_t k = 0; k < keystrings_.size(); ++k) {
        nlohmann::json item;
        item["tokens"] = keystrings_[k];
        std::vector<int> clauses;
        for (int c = 0; c < num_clauses_; ++c)
            if (keystring_clauses_[k] & (ClauseMask(1) << c)) clauses.push_back(c);
        item["clauses"] = clauses;
        ks.push_back(std::move(item));
    }
    j["keystrings"] = std::move(ks);
    nlohmann::json sfx = nlohmann::json::array();
    for (int sid = 1; sid < num_suffixes(); ++sid) sfx.push_back(suffixes_[sid]);
    j["suffixes"] = std::move(sfx);
    out << j.dump(2) << "\n";
}

}  // namespace lexgen
