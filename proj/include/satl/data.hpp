#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "satl/treebank.hpp"

namespace satl {

// Lowercases ASCII letters; tokens are compared and stored in this form.
std::string normalize_token(const std::string& tok);

class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kMask = 2;

    // Reserved entries first, then corpus types with frequency >= min_freq,
    // ordered by descending frequency with lexicographic tie-break.
    static Vocab build(const std::vector<std::vector<std::string>>& corpus, int min_freq = 1);

    int encode(const std::string& tok) const;       // unknown types map to kUnk
    const std::string& decode(int id) const;        // out of range throws VocabError
    int size() const { return static_cast<int>(id_to_token_.size()); }
    const std::vector<std::string>& tokens() const { return id_to_token_; }

    // Rebuilds the lookup table from an explicit id ordering (checkpoint restore).
    static Vocab from_tokens(std::vector<std::string> toks);

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

struct Corpus {
    std::vector<std::vector<std::string>> sentences;  // raw tokens, one vector per line
    int skipped_empty = 0;
};

// Whitespace-tokenized lines; empty lines are skipped and counted.
Corpus read_corpus(const std::string& path);

struct TokenBatch {
    std::vector<std::vector<int>> ids;  // [batch][n_max], kPad beyond each length
    std::vector<int> lengths;
    std::vector<int> sentence_index;    // position of each row in the source corpus
    int n_max = 0;

    int rows() const { return static_cast<int>(ids.size()); }
};

struct BatchedCorpus {
    std::vector<TokenBatch> batches;
    int truncated = 0;  // sentences cut to max_len
};

// Batches sentences in corpus order; the final batch may be smaller. Rows
// are padded to the batch-local maximum length.
BatchedCorpus encode_and_batch(const std::vector<std::vector<std::string>>& sentences,
                               const Vocab& vocab, int batch_size, int max_len);

struct SynthSentence {
    std::vector<std::string> tokens;
    ConstituencyTree tree;
    DependencyGraph deps;
    std::vector<std::string> pos;      // per-token tag, for the dependency rows
    std::vector<std::string> deprel;
};

// Samples one sentence from a fixed probabilistic grammar over a small
// closed vocabulary: S -> NP VP, NP -> Det N | Det Adj N, VP -> V NP | V PP,
// PP -> P NP. Heads percolate from N, V, and P.
SynthSentence synth_sentence(std::mt19937_64& rng);

struct SynthCorpus {
    std::vector<SynthSentence> sentences;
};

SynthCorpus synth_corpus(int n_sentences, std::uint64_t seed);

// Writes <prefix>.txt, <prefix>.trees, and <prefix>.conllx, aligned line for
// line (the dependency file uses blank-line-separated blocks).
void write_synth_corpus(const SynthCorpus& corpus, const std::string& prefix);

std::string conllx_block(const SynthSentence& s);

}  // namespace satl
