#include "satl/syntax.hpp"

#include <cmath>
#include <cstdio>

#include "satl/error.hpp"

namespace satl {

namespace {

double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

double membership_prob(const std::vector<double>& d, int start, int end, int j) {
    const int n = static_cast<int>(d.size());
    if (start < 1 || end < start || j != end + 1 || j > n)
        throw ContractError("membership_prob: bad span [" + std::to_string(start) + ", " +
                            std::to_string(end) + "] with candidate " + std::to_string(j));
    double p = 1.0;
    for (int k = start; k <= end; ++k) p *= sigmoid_scalar(d[j - 1] - d[k - 1]);
    return p;
}

PhraseSegmentation segment_phrases(const std::vector<double>& d, double lambda,
                                   bool two_token_opening) {
    const int n = static_cast<int>(d.size());
    if (n < 1) throw ContractError("cannot segment an empty sentence");
    if (lambda < 0.0 || lambda > 1.0)
        throw ConfigError("lambda must lie in [0, 1], got " + std::to_string(lambda));
    for (double x : d)
        if (!std::isfinite(x)) throw NumericError("non-finite syntactic distance");

    PhraseSegmentation seg;
    seg.membership_probs.assign(n, 1.0);
    int start = 1;
    int j = 2;
    if (two_token_opening && n >= 2) {
        seg.membership_probs[1] = membership_prob(d, 1, 1, 2);
        j = 3;
    }
    for (; j <= n; ++j) {
        const double p = membership_prob(d, start, j - 1, j);
        if (p > lambda) {
            seg.membership_probs[j - 1] = p;
        } else {
            seg.spans.push_back(Span{start, j - 1});
            start = j;
            if (two_token_opening && j + 1 <= n) {
                seg.membership_probs[j] = membership_prob(d, j, j, j + 1);
                ++j;
            }
        }
    }
    seg.spans.push_back(Span{start, n});
    return seg;
}

std::pair<std::vector<double>, PhraseSegmentation> inject_gold(const GoldSyntax& gold, int n,
                                                               double lambda, bool resegment,
                                                               GoldDistanceMode mode) {
    if (static_cast<int>(gold.tokens.size()) != n)
        throw AlignmentError("gold annotation covers " + std::to_string(gold.tokens.size()) +
                             " tokens, sentence has " + std::to_string(n));
    std::vector<double> d = gold_distances(gold, mode);
    if (resegment) return {d, segment_phrases(d, lambda)};

    if (!gold.tree) throw DataError("constituency annotations required for gold segmentation");
    PhraseSegmentation seg;
    seg.membership_probs.assign(n, 1.0);
    for (const LabeledSpan& ls : gold_spans(*gold.tree)) {
        seg.spans.push_back(Span{ls.start, ls.end});
        for (int j = ls.start + 1; j <= ls.end; ++j)
            seg.membership_probs[j - 1] = membership_prob(d, ls.start, j - 1, j);
    }
    return {d, seg};
}

std::string format_induction_line(const std::vector<std::string>& tokens,
                                  const std::vector<double>& d,
                                  const std::vector<Span>& spans) {
    if (tokens.size() != d.size())
        throw ContractError("token/distance length mismatch in induction dump");
    std::string out;
    char buf[64];
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        std::snprintf(buf, sizeof buf, "%.2f", d[i]);
        out += tokens[i];
        out += ':';
        out += buf;
    }
    out += " |||";
    for (const Span& sp : spans) {
        std::snprintf(buf, sizeof buf, " (%d,%d)", sp.start, sp.end);
        out += buf;
    }
    return out;
}

SyntaxHead::SyntaxHead(int d_model, std::mt19937_64& rng) : d_model_(d_model) {
    if (d_model < 1) throw ConfigError("d_model must be positive");
    // Logits of the target mix recover (0.35, 0.40, 0.25) exactly under softmax.
    alpha_logits = Tensor::from({std::log(0.35), std::log(0.40), std::log(0.25)}, {3}, true);
    conv_kernel = Tensor::randn({3, d_model, d_model}, 0.02, rng, true);
    conv_bias = Tensor::zeros({d_model}, true);
    out_weight = Tensor::randn({d_model, 1}, 0.02, rng, true);
    out_bias = Tensor::zeros({1}, true);
    named_.emplace_back("alpha.logits", alpha_logits);
    named_.emplace_back("dist.conv.kernel", conv_kernel);
    named_.emplace_back("dist.conv.bias", conv_bias);
    named_.emplace_back("dist.out.weight", out_weight);
    named_.emplace_back("dist.out.bias", out_bias);
}

SyntacticContexts SyntaxHead::build_contexts(const LayerActivations& acts, int l,
                                             int valid_len) const {
    const int n_layers = static_cast<int>(acts.layer_out.size()) - 1;
    if (l <= 1 || l >= n_layers)
        throw ConfigError("structure layer " + std::to_string(l) + " needs neighbours within 1.." +
                          std::to_string(n_layers));
    if (valid_len < 1 || valid_len > acts.layer_out[0].dim(0))
        throw ContractError("valid_len " + std::to_string(valid_len) + " out of range");

    SyntacticContexts ctx;
    ctx.word_ctx = slice_rows(acts.layer_out[l - 1], 0, valid_len);
    ctx.alphas = softmax_lastdim(alpha_logits);
    Tensor mix;
    for (int k = 0; k < 3; ++k) {
        Tensor a_k = take_rows(ctx.alphas, {k});  // [1], broadcast as scalar
        Tensor term = mul(slice_rows(acts.layer_out[l - 1 + k], 0, valid_len), a_k);
        mix = k == 0 ? term : add(mix, term);
    }
    ctx.phrasal_ctx = mix;
    return ctx;
}

Tensor SyntaxHead::distances(const Tensor& word_ctx) const {
    if (word_ctx.rank() != 2 || word_ctx.dim(1) != d_model_)
        throw ShapeError("word context must be [n, " + std::to_string(d_model_) + "]");
    Tensor hidden = relu(add(conv1d_same(word_ctx, conv_kernel), conv_bias));
    return add(matmul(hidden, out_weight), out_bias);
}

std::vector<double> SyntaxHead::distance_values(const Tensor& d) {
    if (d.rank() != 2 || d.dim(1) != 1) throw ShapeError("distance tensor must be [n, 1]");
    return d.data();
}

std::vector<PhraseEmbedding> SyntaxHead::phrase_embed(const PhraseSegmentation& seg,
                                                      const Tensor& d,
                                                      const Tensor& word_ctx) const {
    const int n = word_ctx.dim(0);
    if (static_cast<int>(seg.membership_probs.size()) != n || d.dim(0) != n)
        throw ContractError("segmentation does not cover the context rows");
    std::vector<PhraseEmbedding> out;
    out.reserve(seg.spans.size());
    for (const Span& sp : seg.spans) {
        const int len = sp.end - sp.start + 1;
        // Membership probabilities enter as constants: the segmentation is a
        // discrete decision, so no gradient flows through p*.
        std::vector<double> probs(seg.membership_probs.begin() + sp.start - 1,
                                  seg.membership_probs.begin() + sp.end);
        Tensor p = Tensor::from(std::move(probs), {len, 1});
        Tensor scores = transpose(mul(slice_rows(d, sp.start - 1, sp.end), p));
        PhraseEmbedding pe;
        pe.span = sp;
        pe.weights = softmax_lastdim(scores);  // [1, len]
        pe.embed = matmul(pe.weights, slice_rows(word_ctx, sp.start - 1, sp.end));
        out.push_back(std::move(pe));
    }
    return out;
}

}  // namespace satl
