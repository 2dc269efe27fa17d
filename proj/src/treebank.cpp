#include "satl/treebank.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>

#include "satl/error.hpp"

namespace satl {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

struct PtbParser {
    const std::string& s;
    std::size_t pos = 0;
    ConstituencyTree tree;

    explicit PtbParser(const std::string& line) : s(line) {}

    void skip_space() {
        while (pos < s.size() && is_space(s[pos])) ++pos;
    }

    std::string read_atom() {
        std::size_t begin = pos;
        while (pos < s.size() && !is_space(s[pos]) && s[pos] != '(' && s[pos] != ')') ++pos;
        return s.substr(begin, pos - begin);
    }

    // Parses "(LABEL child...)" starting at '('; returns the node index.
    int parse_node() {
        if (pos >= s.size() || s[pos] != '(')
            throw ParseError("expected '('", pos);
        ++pos;
        skip_space();
        std::size_t label_at = pos;
        std::string label = read_atom();
        if (label.empty()) throw ParseError("node label missing", label_at);

        int id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(ConstNode{label, 0, 0, {}});

        std::vector<TreeChild> children;
        while (true) {
            skip_space();
            if (pos >= s.size()) throw ParseError("unbalanced parentheses", pos);
            if (s[pos] == ')') {
                ++pos;
                break;
            }
            if (s[pos] == '(') {
                children.push_back(TreeChild{false, parse_node()});
            } else {
                std::size_t tok_at = pos;
                std::string tok = read_atom();
                if (tok.empty()) throw ParseError("expected token or subtree", tok_at);
                tree.tokens.push_back(tok);
                children.push_back(TreeChild{true, static_cast<int>(tree.tokens.size())});
            }
        }
        if (children.empty()) throw ParseError("constituent has no children", pos - 1);

        int lo = 0, hi = 0;
        for (const TreeChild& c : children) {
            int a = c.is_token ? c.index : tree.nodes[c.index].start;
            int b = c.is_token ? c.index : tree.nodes[c.index].end;
            if (lo == 0) lo = a;
            hi = b;
        }
        tree.nodes[id].start = lo;
        tree.nodes[id].end = hi;
        tree.nodes[id].children = std::move(children);
        return id;
    }

    ConstituencyTree run() {
        skip_space();
        if (pos >= s.size()) throw ParseError("empty input", pos);
        parse_node();
        skip_space();
        if (pos < s.size()) throw ParseError("trailing content after tree", pos);
        return std::move(tree);
    }
};

void serialize_node(const ConstituencyTree& t, int id, std::string& out) {
    const ConstNode& n = t.nodes[id];
    out += '(';
    out += n.label;
    for (const TreeChild& c : n.children) {
        out += ' ';
        if (c.is_token)
            out += t.tokens[c.index - 1];
        else
            serialize_node(t, c.index, out);
    }
    out += ')';
}

}  // namespace

int ConstituencyTree::parent_node_of(int token_pos) const {
    for (int i = 0; i < static_cast<int>(nodes.size()); ++i)
        for (const TreeChild& c : nodes[i].children)
            if (c.is_token && c.index == token_pos) return i;
    throw ContractError("token position " + std::to_string(token_pos) + " not in tree");
}

ConstituencyTree parse_ptb_bracketed(const std::string& line) {
    PtbParser p(line);
    return p.run();
}

std::string serialize_tree(const ConstituencyTree& tree) {
    if (tree.nodes.empty()) throw ContractError("cannot serialize empty tree");
    std::string out;
    serialize_node(tree, 0, out);
    return out;
}

void DependencyGraph::validate() const {
    const int n = size();
    if (static_cast<int>(heads.size()) != n)
        throw ValidityError("dependency heads/tokens length mismatch");
    int roots = 0;
    for (int i = 0; i < n; ++i) {
        if (heads[i] < 0 || heads[i] > n)
            throw ValidityError("head index " + std::to_string(heads[i]) +
                                " out of range for " + std::to_string(n) + " tokens");
        if (heads[i] == i + 1) throw ValidityError("token " + std::to_string(i + 1) + " is its own head");
        if (heads[i] == 0) ++roots;
    }
    if (roots != 1)
        throw ValidityError("expected exactly one root, found " + std::to_string(roots));
    for (int i = 0; i < n; ++i) {
        int cur = i + 1, steps = 0;
        while (cur != 0) {
            cur = heads[cur - 1];
            if (++steps > n)
                throw ValidityError("cycle reachable from token " + std::to_string(i + 1));
        }
    }
}

DependencyGraph parse_conllx_block(const std::vector<std::string>& lines) {
    if (lines.empty()) throw ParseError("empty dependency block", 0);
    DependencyGraph g;
    for (std::size_t r = 0; r < lines.size(); ++r) {
        std::vector<std::string> cols;
        std::size_t begin = 0;
        const std::string& ln = lines[r];
        while (true) {
            std::size_t tab = ln.find('\t', begin);
            cols.push_back(ln.substr(begin, tab == std::string::npos ? tab : tab - begin));
            if (tab == std::string::npos) break;
            begin = tab + 1;
        }
        if (cols.size() != 10)
            throw ParseError("row " + std::to_string(r + 1) + " has " +
                                 std::to_string(cols.size()) + " columns, expected 10",
                             r);
        int id = 0, head = 0;
        try {
            id = std::stoi(cols[0]);
            head = std::stoi(cols[6]);
        } catch (const std::exception&) {
            throw ParseError("row " + std::to_string(r + 1) + " has non-numeric ID or HEAD", r);
        }
        if (id != static_cast<int>(r) + 1)
            throw ParseError("row " + std::to_string(r + 1) + " has ID " + std::to_string(id), r);
        g.tokens.push_back(cols[1]);
        g.heads.push_back(head);
    }
    g.validate();
    return g;
}

std::vector<DependencyGraph> read_conllx_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::vector<DependencyGraph> out;
    std::vector<std::string> block;
    std::string line;
    auto flush = [&] {
        if (!block.empty()) {
            out.push_back(parse_conllx_block(block));
            block.clear();
        }
    };
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty())
            flush();
        else
            block.push_back(line);
    }
    flush();
    return out;
}

std::vector<ConstituencyTree> read_trees_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::vector<ConstituencyTree> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        bool blank = line.find_first_not_of(" \t") == std::string::npos;
        if (blank) continue;
        try {
            out.push_back(parse_ptb_bracketed(line));
        } catch (const ParseError& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what(), e.offset);
        }
    }
    return out;
}

std::vector<double> gold_distances(const GoldSyntax& gold, GoldDistanceMode mode) {
    if (mode == GoldDistanceMode::DepDepth) {
        if (!gold.deps) throw DataError("dependency annotations required for depth distances");
        const DependencyGraph& g = *gold.deps;
        g.validate();
        std::vector<double> d(g.size());
        for (int i = 0; i < g.size(); ++i) {
            int cur = i + 1, depth = 0;
            while (g.heads[cur - 1] != 0) {
                cur = g.heads[cur - 1];
                ++depth;
            }
            d[i] = static_cast<double>(depth);
        }
        return d;
    }
    if (!gold.tree) throw DataError("constituency annotations required for height distances");
    const ConstituencyTree& t = *gold.tree;
    const int n = t.size();
    std::vector<int> node_depth(t.nodes.size(), 0);
    std::vector<double> leaf_depth(n, 0.0);
    std::function<void(int, int)> walk = [&](int id, int depth) {
        node_depth[id] = depth;
        for (const TreeChild& c : t.nodes[id].children) {
            if (c.is_token)
                leaf_depth[c.index - 1] = depth + 1;
            else
                walk(c.index, depth + 1);
        }
    };
    walk(0, 0);
    double height = 0.0;
    for (double d : leaf_depth) height = std::max(height, d);
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) out[i] = height - leaf_depth[i];
    return out;
}

std::vector<LabeledSpan> gold_spans(const ConstituencyTree& tree) {
    const int n = tree.size();
    std::vector<LabeledSpan> out;
    int run_start = 1;
    int run_node = tree.parent_node_of(1);
    for (int pos = 2; pos <= n; ++pos) {
        int node = tree.parent_node_of(pos);
        if (node != run_node) {
            out.push_back(LabeledSpan{run_start, pos - 1, tree.nodes[run_node].label});
            run_start = pos;
            run_node = node;
        }
    }
    out.push_back(LabeledSpan{run_start, n, tree.nodes[run_node].label});
    return out;
}

std::vector<LabeledSpan> all_constituent_spans(const ConstituencyTree& tree) {
    std::vector<LabeledSpan> out;
    out.reserve(tree.nodes.size());
    for (const ConstNode& nd : tree.nodes)
        out.push_back(LabeledSpan{nd.start, nd.end, nd.label});
    return out;
}

std::vector<Span> distance_to_tree(const std::vector<double>& distances) {
    const int n = static_cast<int>(distances.size());
    std::vector<Span> spans;
    std::function<void(int, int)> split = [&](int lo, int hi) {
        if (lo >= hi) return;
        spans.push_back(Span{lo, hi});
        int k = lo;
        for (int i = lo + 1; i <= hi; ++i)
            if (distances[i - 1] > distances[k - 1]) k = i;
        if (k == lo) {
            split(lo + 1, hi);
        } else {
            split(lo, k - 1);
            split(k, hi);
        }
    };
    split(1, n);
    std::sort(spans.begin(), spans.end());
    return spans;
}

std::vector<GoldSyntax> load_treebank(const std::string& trees_path,
                                      const std::string& deps_path) {
    std::vector<ConstituencyTree> trees = read_trees_file(trees_path);
    std::vector<DependencyGraph> deps = read_conllx_file(deps_path);
    if (trees.size() != deps.size())
        throw AlignmentError("treebank has " + std::to_string(trees.size()) + " trees but " +
                             std::to_string(deps.size()) + " dependency blocks");
    std::vector<GoldSyntax> out;
    out.reserve(trees.size());
    for (std::size_t i = 0; i < trees.size(); ++i) {
        if (trees[i].tokens != deps[i].tokens)
            throw AlignmentError("sentence " + std::to_string(i + 1) +
                                 ": tree and dependency tokens differ");
        GoldSyntax g;
        g.tokens = trees[i].tokens;
        g.tree = std::move(trees[i]);
        g.deps = std::move(deps[i]);
        out.push_back(std::move(g));
    }
    return out;
}

void validate_alignment(const std::vector<std::vector<std::string>>& corpus,
                        const std::vector<GoldSyntax>& gold) {
    if (corpus.size() != gold.size())
        throw AlignmentError("corpus has " + std::to_string(corpus.size()) +
                             " sentences but treebank has " + std::to_string(gold.size()));
    for (std::size_t i = 0; i < corpus.size(); ++i)
        if (corpus[i] != gold[i].tokens)
            throw AlignmentError("sentence " + std::to_string(i + 1) +
                                 ": corpus and treebank tokens differ");
}

ManifestPaths load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    ManifestPaths mp;
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        std::size_t a = s.find_first_not_of(" \t");
        std::size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected key = value", lineno);
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (key == "sentences")
            mp.sentences = val;
        else if (key == "trees")
            mp.trees = val;
        else if (key == "deps")
            mp.deps = val;
        else
            throw ParseError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'",
                             lineno);
    }
    if (mp.sentences.empty() || mp.trees.empty() || mp.deps.empty())
        throw DataError(path + ": manifest must set sentences, trees, and deps");
    return mp;
}

}  // namespace satl
