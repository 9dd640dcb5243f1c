#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "lexgen/hmm.hpp"

namespace lexgen {

// Training corpus: every sequence EOS-padded to exactly max_len tokens.
struct Corpus {
    std::vector<TokenSeq> sequences;
    int max_len = 0;
    Token eos = 0;
    int vocab_size = 0;

    size_t size() const { return sequences.size(); }
};

TokenSeq pad_to(TokenSeq seq, int max_len, Token eos);

Corpus make_corpus(std::vector<TokenSeq> sequences, int max_len, Token eos,
                   int vocab_size);

// One sequence per line, whitespace-separated decimal token ids. Lines
// shorter than max_len are EOS-padded; longer lines are an error.
Corpus load_corpus(std::istream& in, int max_len, Token eos, int vocab_size);
Corpus load_corpus(const std::string& path, int max_len, Token eos, int vocab_size);

void save_corpus(const Corpus& corpus, std::ostream& out);
void save_corpus(const Corpus& corpus, const std::string& path);

}  // namespace lexgen
