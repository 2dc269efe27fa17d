#include "satl/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "satl/error.hpp"

namespace satl {

std::string normalize_token(const std::string& tok) {
    std::string out = tok;
    for (char& c : out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& corpus, int min_freq) {
    std::map<std::string, long long> freq;
    for (const auto& sent : corpus)
        for (const auto& tok : sent) ++freq[normalize_token(tok)];

    std::vector<std::pair<std::string, long long>> types(freq.begin(), freq.end());
    std::sort(types.begin(), types.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocab v;
    v.id_to_token_ = {"<pad>", "<unk>", "<mask>"};
    for (int i = 0; i < 3; ++i) v.token_to_id_[v.id_to_token_[i]] = i;
    for (const auto& [tok, count] : types) {
        if (count < min_freq) continue;
        if (v.token_to_id_.count(tok)) continue;  // reserved name used in text
        v.token_to_id_[tok] = static_cast<int>(v.id_to_token_.size());
        v.id_to_token_.push_back(tok);
    }
    return v;
}

int Vocab::encode(const std::string& tok) const {
    auto it = token_to_id_.find(normalize_token(tok));
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::decode(int id) const {
    if (id < 0 || id >= size())
        throw VocabError("token id " + std::to_string(id) + " out of range (vocab size " +
                         std::to_string(size()) + ")");
    return id_to_token_[id];
}

Vocab Vocab::from_tokens(std::vector<std::string> toks) {
    static const char* kReserved[3] = {"<pad>", "<unk>", "<mask>"};
    if (toks.size() < 3) throw VocabError("vocabulary must include the reserved entries");
    for (int i = 0; i < 3; ++i)
        if (toks[i] != kReserved[i])
            throw VocabError("vocabulary slot " + std::to_string(i) + " must be " + kReserved[i]);
    Vocab v;
    v.id_to_token_ = std::move(toks);
    for (int i = 0; i < v.size(); ++i) {
        if (v.token_to_id_.count(v.id_to_token_[i]))
            throw VocabError("duplicate vocabulary entry " + v.id_to_token_[i]);
        v.token_to_id_[v.id_to_token_[i]] = i;
    }
    return v;
}

Corpus read_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    Corpus c;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::vector<std::string> toks;
        std::string t;
        while (ss >> t) toks.push_back(t);
        if (toks.empty())
            ++c.skipped_empty;
        else
            c.sentences.push_back(std::move(toks));
    }
    return c;
}

BatchedCorpus encode_and_batch(const std::vector<std::vector<std::string>>& sentences,
                               const Vocab& vocab, int batch_size, int max_len) {
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (max_len < 1) throw ConfigError("max_len must be positive");
    BatchedCorpus out;
    TokenBatch cur;
    auto flush = [&] {
        if (cur.rows() == 0) return;
        cur.n_max = *std::max_element(cur.lengths.begin(), cur.lengths.end());
        for (auto& row : cur.ids) row.resize(cur.n_max, Vocab::kPad);
        out.batches.push_back(std::move(cur));
        cur = TokenBatch{};
    };
    for (std::size_t s = 0; s < sentences.size(); ++s) {
        std::vector<int> ids;
        for (const auto& tok : sentences[s]) ids.push_back(vocab.encode(tok));
        if (static_cast<int>(ids.size()) > max_len) {
            ids.resize(max_len);
            ++out.truncated;
        }
        cur.lengths.push_back(static_cast<int>(ids.size()));
        cur.sentence_index.push_back(static_cast<int>(s));
        cur.ids.push_back(std::move(ids));
        if (cur.rows() == batch_size) flush();
    }
    flush();
    return out;
}

namespace {

// Closed word lists: 6 determiners, 6 prepositions, and numbered open-class
// forms. 302 surface types in total.
const std::vector<std::string>& det_list() {
    static const std::vector<std::string> v = {"the", "a", "every", "some", "this", "that"};
    return v;
}
const std::vector<std::string>& prep_list() {
    static const std::vector<std::string> v = {"in", "on", "with", "near", "under", "behind"};
    return v;
}
std::vector<std::string> numbered(const std::string& stem, int n) {
    std::vector<std::string> v;
    v.reserve(n);
    for (int i = 1; i <= n; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%s%03d", stem.c_str(), i);
        v.emplace_back(buf);
    }
    return v;
}
const std::vector<std::string>& noun_list() {
    static const std::vector<std::string> v = numbered("n", 150);
    return v;
}
const std::vector<std::string>& verb_list() {
    static const std::vector<std::string> v = numbered("v", 80);
    return v;
}
const std::vector<std::string>& adj_list() {
    static const std::vector<std::string> v = numbered("adj", 60);
    return v;
}

// Explicit draws keep the stream identical across standard libraries.
std::size_t draw_index(std::mt19937_64& rng, std::size_t n) { return rng() % n; }
double draw_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

struct SentenceBuilder {
    std::mt19937_64& rng;
    SynthSentence s;

    int add_token(const std::string& tok, const std::string& pos) {
        s.tokens.push_back(tok);
        s.pos.push_back(pos);
        s.deps.tokens.push_back(tok);
        s.deps.heads.push_back(0);
        s.deprel.emplace_back();
        return static_cast<int>(s.tokens.size());
    }

    int add_node(const std::string& label) {
        s.tree.nodes.push_back(ConstNode{label, 0, 0, {}});
        return static_cast<int>(s.tree.nodes.size()) - 1;
    }

    void attach(int dep_pos, int head_pos, const std::string& rel) {
        s.deps.heads[dep_pos - 1] = head_pos;
        s.deprel[dep_pos - 1] = rel;
    }

    void close_node(int id, std::vector<TreeChild> children) {
        auto span_of = [&](const TreeChild& c) {
            return c.is_token ? std::pair{c.index, c.index}
                              : std::pair{s.tree.nodes[c.index].start, s.tree.nodes[c.index].end};
        };
        s.tree.nodes[id].start = span_of(children.front()).first;
        s.tree.nodes[id].end = span_of(children.back()).second;
        s.tree.nodes[id].children = std::move(children);
    }

    // NP -> Det N (0.7) | Det Adj N (0.3); the noun heads the phrase.
    std::pair<int, int> sample_np() {
        int node = add_node("NP");
        bool with_adj = draw_unit(rng) < 0.3;
        int det = add_token(det_list()[draw_index(rng, det_list().size())], "DET");
        std::vector<TreeChild> kids = {TreeChild{true, det}};
        int adj = 0;
        if (with_adj) {
            adj = add_token(adj_list()[draw_index(rng, adj_list().size())], "ADJ");
            kids.push_back(TreeChild{true, adj});
        }
        int noun = add_token(noun_list()[draw_index(rng, noun_list().size())], "NOUN");
        kids.push_back(TreeChild{true, noun});
        attach(det, noun, "det");
        if (adj) attach(adj, noun, "amod");
        close_node(node, std::move(kids));
        return {node, noun};
    }

    // PP -> P NP; the preposition heads the phrase.
    std::pair<int, int> sample_pp() {
        int node = add_node("PP");
        int p = add_token(prep_list()[draw_index(rng, prep_list().size())], "ADP");
        auto [np, np_head] = sample_np();
        attach(np_head, p, "pobj");
        close_node(node, {TreeChild{true, p}, TreeChild{false, np}});
        return {node, p};
    }

    // VP -> V NP (0.6) | V PP (0.4); the verb heads the phrase.
    std::pair<int, int> sample_vp() {
        int node = add_node("VP");
        bool take_np = draw_unit(rng) < 0.6;
        int v = add_token(verb_list()[draw_index(rng, verb_list().size())], "VERB");
        if (take_np) {
            auto [np, np_head] = sample_np();
            attach(np_head, v, "obj");
            close_node(node, {TreeChild{true, v}, TreeChild{false, np}});
        } else {
            auto [pp, pp_head] = sample_pp();
            attach(pp_head, v, "prep");
            close_node(node, {TreeChild{true, v}, TreeChild{false, pp}});
        }
        return {node, v};
    }

    SynthSentence run() {
        int root = add_node("S");
        auto [np, subj_head] = sample_np();
        auto [vp, verb_head] = sample_vp();
        attach(subj_head, verb_head, "nsubj");
        s.deps.heads[verb_head - 1] = 0;
        s.deprel[verb_head - 1] = "root";
        close_node(root, {TreeChild{false, np}, TreeChild{false, vp}});
        s.tree.tokens = s.tokens;
        s.deps.validate();
        return std::move(s);
    }
};

}  // namespace

SynthSentence synth_sentence(std::mt19937_64& rng) {
    SentenceBuilder b{rng, {}};
    return b.run();
}

SynthCorpus synth_corpus(int n_sentences, std::uint64_t seed) {
    if (n_sentences < 1) throw ConfigError("n_sentences must be positive");
    std::mt19937_64 rng(seed);
    SynthCorpus c;
    c.sentences.reserve(n_sentences);
    for (int i = 0; i < n_sentences; ++i) c.sentences.push_back(synth_sentence(rng));
    return c;
}

std::string conllx_block(const SynthSentence& s) {
    std::string out;
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
        out += std::to_string(i + 1);
        out += '\t';
        out += s.tokens[i];
        out += '\t';
        out += s.tokens[i];
        out += '\t';
        out += s.pos[i];
        out += '\t';
        out += s.pos[i];
        out += "\t_\t";
        out += std::to_string(s.deps.heads[i]);
        out += '\t';
        out += s.deprel[i];
        out += "\t_\t_\n";
    }
    return out;
}

void write_synth_corpus(const SynthCorpus& corpus, const std::string& prefix) {
    std::ofstream txt(prefix + ".txt");
    std::ofstream trees(prefix + ".trees");
    std::ofstream conll(prefix + ".conllx");
    if (!txt || !trees || !conll) throw DataError("cannot write corpus files at " + prefix);
    for (const SynthSentence& s : corpus.sentences) {
        for (std::size_t i = 0; i < s.tokens.size(); ++i) {
            if (i) txt << ' ';
            txt << s.tokens[i];
        }
        txt << '\n';
        trees << serialize_tree(s.tree) << '\n';
        conll << conllx_block(s) << '\n';
    }
}

}  // namespace satl
