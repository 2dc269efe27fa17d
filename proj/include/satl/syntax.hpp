#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "satl/encoder.hpp"
#include "satl/tensor.hpp"
#include "satl/treebank.hpp"

namespace satl {

// Contexts read off the encoder stack at the structure layer l.
// word_ctx is the layer-(l-1) states; phrasal_ctx mixes layers l-1, l, l+1
// with trainable convex weights.
struct SyntacticContexts {
    Tensor word_ctx;     // [n, d_model]
    Tensor phrasal_ctx;  // [n, d_model]
    Tensor alphas;       // [3], softmax of the free logits
};

// Greedy left-to-right phrase partition. spans tile 1..n; probs[j-1] is the
// membership probability recorded when token j was admitted (1.0 for a
// token that opens its phrase).
struct PhraseSegmentation {
    std::vector<Span> spans;
    std::vector<double> membership_probs;
};

struct PhraseEmbedding {
    Span span;
    Tensor weights;  // [1, len] phrasal attention over the span
    Tensor embed;    // [1, d_model]
};

// p*(x_j) against the open span [start, end]: product over k in the span of
// sigmoid(d_j - d_k). All positions 1-based; requires j == end + 1.
double membership_prob(const std::vector<double>& d, int start, int end, int j);

// Greedy left-to-right segmentation: open at token 1; each next token joins
// the open phrase iff its membership probability strictly exceeds lambda,
// else the phrase closes and a new one opens. With two_token_opening, a
// freshly opened phrase absorbs the following token unconditionally; default
// keeps single-token openings.
PhraseSegmentation segment_phrases(const std::vector<double>& d, double lambda,
                                   bool two_token_opening = false);

// Gold-derived replacement for the induced distances and segmentation.
// Distances come from the requested gold mode. By default the segmentation
// is the treebank's lowest-constituent partition with membership
// probabilities evaluated from the gold distances; with resegment = true
// the greedy procedure is re-run on those distances at lambda instead.
std::pair<std::vector<double>, PhraseSegmentation> inject_gold(
    const GoldSyntax& gold, int n, double lambda, bool resegment = false,
    GoldDistanceMode mode = GoldDistanceMode::DepDepth);

// One line per sentence: token:distance pairs, "|||", then the spans.
std::string format_induction_line(const std::vector<std::string>& tokens,
                                  const std::vector<double>& d,
                                  const std::vector<Span>& spans);

// Trainable structure head: layer-mixing weights plus the distance network
// (width-3 convolution, relu, linear readout to one scalar per token).
class SyntaxHead {
  public:
    SyntaxHead(int d_model, std::mt19937_64& rng);

    const std::vector<std::pair<std::string, Tensor>>& named_params() const { return named_; }

    // Valid rows only; l indexes encoder layers, 1 < l < n_layers.
    SyntacticContexts build_contexts(const LayerActivations& acts, int l, int valid_len) const;

    // [n, 1] distance column from the word context.
    Tensor distances(const Tensor& word_ctx) const;

    // Extracts plain values for the (discrete, non-differentiable)
    // segmentation decisions.
    static std::vector<double> distance_values(const Tensor& d);

    // Per span, u = softmax(d_i * p_i) with the recorded membership
    // probabilities entering as constants; the phrase embedding is the
    // u-weighted word context.
    std::vector<PhraseEmbedding> phrase_embed(const PhraseSegmentation& seg, const Tensor& d,
                                              const Tensor& word_ctx) const;

    Tensor alpha_logits;
    Tensor conv_kernel, conv_bias;
    Tensor out_weight, out_bias;

  private:
    int d_model_;
    std::vector<std::pair<std::string, Tensor>> named_;
};

}  // namespace satl
