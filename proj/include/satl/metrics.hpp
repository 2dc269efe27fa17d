#pragma once

// Evaluation metrics for masked prediction quality and induced phrase
// structure: masked perplexity, exact-match span F1, attention/dependency
// alignment, phrase length deviation, the distance-dispersion statistic,
// and phrase type proportions. Pure scoring functions take plain data so
// they can be pinned against hand arithmetic; the model-driven wrappers
// run the forward pass and feed them.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "satl/train.hpp"
#include "satl/treebank.hpp"

namespace satl {

// --- masked perplexity ---

// Per-sentence negative log likelihood over masked positions, using the
// same corruption scheme as training but on a dedicated eval stream so
// results are reproducible for a given seed. Sentences longer than the
// model's max length are truncated.
struct SentenceNll {
    double nll_sum = 0.0;  // sum of -log p(target) over masked positions
    long count = 0;        // masked positions in this sentence
};

std::vector<SentenceNll> masked_nll(const Model& model,
                                    const std::vector<std::vector<std::string>>& sentences,
                                    const Vocab& vocab, std::uint64_t seed);

// exp of the corpus-wide mean NLL (total nll over total masked count).
// Throws ContractError when no position ends up masked.
double masked_perplexity(const Model& model,
                         const std::vector<std::vector<std::string>>& sentences,
                         const Vocab& vocab, std::uint64_t seed);

// --- span F1 ---

struct SpanPRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Micro-averaged exact-match precision/recall/F1 between induced and gold
// span sets, one set per sentence. Single-token spans are dropped from
// both sides before counting; empty denominators score zero. Requires the
// two lists to cover the same number of sentences.
SpanPRF span_f1(const std::vector<std::vector<Span>>& induced,
                const std::vector<std::vector<Span>>& gold);

// --- dependency alignment ---

// Fraction of attention mass on dependency-related token pairs: sum of
// a[i][j] over pairs (i,j) whose indicator is set, divided by the full
// attention mass including the diagonal. Accumulate over a corpus and
// read the ratio at the end.
struct DepAlignAccum {
    double mass_on_edges = 0.0;
    double total_mass = 0.0;

    // attn is an [n, n] value matrix, indicator an n*n row-major 0/1 mask.
    void add(const Tensor& attn, const std::vector<int>& indicator, int n);
    double score() const;  // 0 when nothing was accumulated
};

// n*n row-major indicator of dependency relatedness. Undirected marks both
// (head, dependent) and (dependent, head); directed marks only attention
// from a token to its own head. The diagonal is never set.
std::vector<int> dependency_indicator(const DependencyGraph& deps, bool directed);

// Per-layer, per-head alignment over all sentences that carry a dependency
// graph (result[l][h], layers and heads as in the encoder). Sentences
// without one are skipped and counted. Throws AlignmentError when a graph's
// size disagrees with its sentence.
struct DepAlignmentResult {
    std::vector<std::vector<double>> score;
    int skipped = 0;
};

DepAlignmentResult dependency_alignment(const Model& model,
                                        const std::vector<std::vector<std::string>>& sentences,
                                        const Vocab& vocab,
                                        const std::vector<GoldSyntax>& gold,
                                        bool directed = false);

// --- phrase length deviation ---

// Each induced span is aligned to the gold span with maximal token overlap
// (leftmost gold span on ties) and scored by the absolute length gap. A
// sentence's deviation is the population standard deviation of those gaps;
// the corpus reports their mean and median. Sentences with no gold spans
// are skipped and counted.
struct PhrDevResult {
    double mean = 0.0;
    double median = 0.0;
    int skipped = 0;
};

double sentence_phr_dev(const std::vector<Span>& induced, const std::vector<Span>& gold);
PhrDevResult phr_dev(const std::vector<std::vector<Span>>& induced,
                     const std::vector<std::vector<Span>>& gold);

// --- distance dispersion ---

// Mean absolute gap between each syntactic distance and the distance at
// the sub-root (leftmost minimum). Raw values are min-max normalized
// across the corpus; if every sentence scores the same the normalized
// values are all zero and `degenerate` is set so callers can warn.
struct DiffResult {
    std::vector<double> raw;
    std::vector<double> normalized;
    bool degenerate = false;
};

double sentence_diff(const std::vector<double>& distances);
DiffResult diff_statistic(const std::vector<std::vector<double>>& distances);

// --- phrase types ---

// Label each induced span by the gold constituent with the identical span
// (deepest constituent wins when nested nodes coincide); spans matching no
// constituent count as "Other". Proportions are over all induced spans and
// sum to one; avg_len includes single-token spans.
struct PhraseTypeResult {
    std::vector<std::pair<std::string, double>> proportions;  // sorted by label, Other last
    double avg_len = 0.0;
    long total = 0;
};

PhraseTypeResult phrase_type_proportions(const std::vector<std::vector<Span>>& induced,
                                         const std::vector<std::vector<LabeledSpan>>& gold);

// --- full report ---

struct EvalOptions {
    std::uint64_t seed = 0;       // eval masking stream
    double lambda = 0.5;          // segmentation threshold
    bool directed = false;        // dependency alignment direction
    int histogram_bins = 10;      // for the dispersion histogram
};

struct EvalReport {
    double perplexity = 0.0;
    SpanPRF span;
    DepAlignmentResult dep_align;
    PhrDevResult phrase_dev;
    DiffResult diff;
    std::vector<long> diff_histogram;  // counts over [0,1] split into equal bins
    PhraseTypeResult phrase_types;
    int truncated = 0;  // sentences cut to the model's max length
};

// Runs the model over the corpus and assembles every metric. Structure
// metrics need gold trees and alignment needs gold dependency graphs;
// sentences missing either are skipped by the affected metric. Pass
// gold = nullptr to restrict the report to perplexity and dispersion.
EvalReport evaluate_model(const Model& model,
                          const std::vector<std::vector<std::string>>& sentences,
                          const Vocab& vocab, const std::vector<GoldSyntax>* gold,
                          const EvalOptions& opt);

// Sectioned CSV (section,key,value) and a flat "key = value" summary.
std::string eval_report_csv(const EvalReport& report);
std::string eval_report_summary(const EvalReport& report);

}  // namespace satl
