#pragma once

#include <random>
#include <vector>

#include "satl/syntax.hpp"
#include "satl/tensor.hpp"

namespace satl {

// Masked positions of one sentence with the original ids to recover.
struct MaskedPrediction {
    Tensor logits;               // [n, vocab]
    std::vector<int> positions;  // 0-based rows into logits
    std::vector<int> targets;    // original token ids, one per position
};

// Mean negative log-likelihood over every masked position in the batch.
Tensor mlm_loss(const std::vector<MaskedPrediction>& preds);

// Cross-entropy of a single-row logit matrix against one class label.
Tensor cross_entropy(const Tensor& logits, int label);

// p = sigmoid(s . c) for row vectors [1, d]; probability that the phrase
// is entailed by the context.
Tensor structure_prob(const Tensor& s, const Tensor& c);

// A phrase embedding paired with the phrasal context row at its opening
// token, tagged with its batch row so negatives can prefer other sentences.
struct PhraseWithContext {
    PhraseEmbedding phrase;
    Tensor ctx_row;  // [1, d_model]
    int sentence = 0;
};

struct StructureLossResult {
    Tensor l_g;    // sum over phrases of (1 - p_pos) + mean negative p
    Tensor l_neg;  // the negative-sample component alone
    int n_phrases = 0;
};

// Negatives are drawn uniformly (with replacement) from the other phrases
// in the batch, restricted to other sentences whenever any exist. A phrase
// with no candidates at all raises SamplingError; callers with a single
// phrase in the batch should skip the structure term instead.
StructureLossResult structure_loss(const std::vector<PhraseWithContext>& phrases,
                                   int negatives_per_phrase, std::mt19937_64& rng);

Tensor pretrain_loss(const Tensor& l_w, const Tensor& l_g, double gamma_pre);
Tensor finetune_loss(const Tensor& l_task, const Tensor& l_g, double gamma_fine);

// Scalar components of one step, for logging. Undefined members (absent
// task loss, skipped structure term) read as 0.
struct LossBreakdown {
    Tensor l_w, l_g, l_neg, l_task, total;
    double value_or_zero(const Tensor& t) const { return t.defined() ? t.value() : 0.0; }
};

}  // namespace satl
