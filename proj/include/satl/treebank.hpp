#pragma once

#include <optional>
#include <string>
#include <vector>

namespace satl {

// A child of a constituency node: either a token (1-based sentence position)
// or another node (index into ConstituencyTree::nodes).
struct TreeChild {
    bool is_token;
    int index;
    bool operator==(const TreeChild&) const = default;
};

struct ConstNode {
    std::string label;
    int start = 0, end = 0;  // 1-based inclusive token span
    std::vector<TreeChild> children;
    bool operator==(const ConstNode&) const = default;
};

struct ConstituencyTree {
    std::vector<std::string> tokens;  // position i+1 holds tokens[i]
    std::vector<ConstNode> nodes;     // nodes[0] is the root
    bool operator==(const ConstituencyTree&) const = default;

    int size() const { return static_cast<int>(tokens.size()); }
    // The node whose direct child is the given token position: every token
    // has exactly one such node, and it is the smallest constituent
    // containing the token.
    int parent_node_of(int token_pos) const;
};

// Bracketed single-line trees with bare-token leaves, e.g.
// "(S (NP the dog) (VP barks))". Defects carry the byte offset.
ConstituencyTree parse_ptb_bracketed(const std::string& line);
std::string serialize_tree(const ConstituencyTree& tree);

struct DependencyGraph {
    std::vector<std::string> tokens;
    std::vector<int> heads;  // heads[i] is the 1-based head of token i+1; 0 marks the root
    bool operator==(const DependencyGraph&) const = default;

    int size() const { return static_cast<int>(tokens.size()); }
    // Single root, in-range heads, no self-loops, no cycles.
    void validate() const;
};

// One blank-line-separated block of 10-column CoNLL rows.
DependencyGraph parse_conllx_block(const std::vector<std::string>& lines);
std::vector<DependencyGraph> read_conllx_file(const std::string& path);
std::vector<ConstituencyTree> read_trees_file(const std::string& path);

struct GoldSyntax {
    std::vector<std::string> tokens;
    std::optional<ConstituencyTree> tree;
    std::optional<DependencyGraph> deps;
};

enum class GoldDistanceMode { DepDepth, ConstHeight };

// Per-token scalar distances derived from gold syntax. DepDepth counts head
// edges up to the dependency root; ConstHeight is tree height minus leaf
// depth, so shallower leaves get larger values.
std::vector<double> gold_distances(const GoldSyntax& gold, GoldDistanceMode mode);

struct LabeledSpan {
    int start = 0, end = 0;  // 1-based inclusive
    std::string label;
    bool operator==(const LabeledSpan&) const = default;
};

// Partition of 1..n formed by maximal runs of tokens sharing the same
// smallest covering constituent; the run carries that constituent's label.
std::vector<LabeledSpan> gold_spans(const ConstituencyTree& tree);

// All labeled constituent spans of the tree (for span labeling lookups).
std::vector<LabeledSpan> all_constituent_spans(const ConstituencyTree& tree);

struct Span {
    int start = 0, end = 0;  // 1-based inclusive
    bool operator==(const Span&) const = default;
    bool operator<(const Span& o) const {
        return start != o.start ? start < o.start : end < o.end;
    }
};

// Binary-branching read-out of a distance vector: recursively split the
// range at its distance argmax (leftmost tie-break); when the argmax is the
// range start the node pairs that leaf with the rest. Returns the internal
// node spans (length >= 2).
std::vector<Span> distance_to_tree(const std::vector<double>& distances);

// Aligned treebank: one tree and one dependency block per corpus sentence.
std::vector<GoldSyntax> load_treebank(const std::string& trees_path,
                                      const std::string& deps_path);

// Tokens of each gold record must match the corpus sentence they annotate.
void validate_alignment(const std::vector<std::vector<std::string>>& corpus,
                        const std::vector<GoldSyntax>& gold);

struct ManifestPaths {
    std::string sentences;
    std::string trees;
    std::string deps;
};

// Three "key = path" lines: sentences, trees, deps.
ManifestPaths load_manifest(const std::string& path);

}  // namespace satl
