#include "lexgen/corpus.hpp"

#include <fstream>
#include <sstream>

#include "lexgen/errors.hpp"

namespace lexgen {

TokenSeq pad_to(TokenSeq seq, int max_len, Token eos) {
    if (seq.size() > static_cast<size_t>(max_len))
        throw InputError("sequence longer than max_len");
    seq.resize(max_len, eos);
    return seq;
}

Corpus make_corpus(std::vector<TokenSeq> sequences, int max_len, Token eos,
                   int vocab_size) {
    if (eos < 0 || eos >= vocab_size) throw InputError("eos token out of range");
    Corpus c;
    c.max_len = max_len;
    c.eos = eos;
    c.vocab_size = vocab_size;
    c.sequences.reserve(sequences.size());
    for (auto& s : sequences) {
        TokenSeq padded = pad_to(std::move(s), max_len, eos);
        if (!eos_legal(padded, eos))
            throw InputError("corpus sequence has a non-EOS token after EOS");
        c.sequences.push_back(std::move(padded));
    }
    return c;
}

Corpus load_corpus(std::istream& in, int max_len, Token eos, int vocab_size) {
    std::vector<TokenSeq> seqs;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        TokenSeq seq;
        long long v;
        while (ls >> v) {
            if (v < 0 || v >= vocab_size)
                throw InputError("corpus line " + std::to_string(lineno) +
                                 ": token id " + std::to_string(v) + " out of range");
            seq.push_back(static_cast<Token>(v));
        }
        if (!ls.eof())
            throw InputError("corpus line " + std::to_string(lineno) + ": not a token id");
        if (seq.size() > static_cast<size_t>(max_len))
            throw InputError("corpus line " + std::to_string(lineno) +
                             ": sequence longer than max_len");
        seqs.push_back(std::move(seq));
    }
    return make_corpus(std::move(seqs), max_len, eos, vocab_size);
}

Corpus load_corpus(const std::string& path, int max_len, Token eos, int vocab_size) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open corpus file " + path);
    return load_corpus(in, max_len, eos, vocab_size);
}

void save_corpus(const Corpus& corpus, std::ostream& out) {
    for (const auto& seq : corpus.sequences) {
        // trailing EOS padding is dropped on write; load re-pads
        size_t len = seq.size();
        while (len > 0 && seq[len - 1] == corpus.eos) --len;
        if (len < seq.size()) ++len;  // keep one terminating EOS when present
        for (size_t i = 0; i < len; ++i) {
            if (i) out << ' ';
            out << seq[i];
        }
        out << '\n';
    }
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open " + path + " for writing");
    save_corpus(corpus, out);
}

}  // namespace lexgen
