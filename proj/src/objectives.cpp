#include "satl/objectives.hpp"

#include "satl/error.hpp"

namespace satl {

Tensor mlm_loss(const std::vector<MaskedPrediction>& preds) {
    int total_masked = 0;
    for (const MaskedPrediction& p : preds) {
        if (p.positions.size() != p.targets.size())
            throw ContractError("masked positions and targets must pair up");
        total_masked += static_cast<int>(p.positions.size());
    }
    if (total_masked == 0) throw ContractError("masked-LM loss needs at least one masked position");

    Tensor sum;
    for (const MaskedPrediction& p : preds) {
        if (p.positions.empty()) continue;
        Tensor rows = take_rows(p.logits, p.positions);
        Tensor nll = scale(sum_all(pick_lastdim(log_softmax_lastdim(rows), p.targets)), -1.0);
        sum = sum.defined() ? add(sum, nll) : nll;
    }
    return scale(sum, 1.0 / static_cast<double>(total_masked));
}

Tensor cross_entropy(const Tensor& logits, int label) {
    if (logits.rank() != 2 || logits.dim(0) != 1)
        throw ShapeError("cross_entropy expects one logit row");
    if (label < 0 || label >= logits.dim(1))
        throw ContractError("label " + std::to_string(label) + " outside the logit range");
    return scale(sum_all(pick_lastdim(log_softmax_lastdim(logits), {label})), -1.0);
}

Tensor structure_prob(const Tensor& s, const Tensor& c) {
    if (s.rank() != 2 || c.rank() != 2 || s.dim(0) != 1 || c.dim(0) != 1 || s.dim(1) != c.dim(1))
        throw ShapeError("structure_prob expects matching [1, d] rows");
    return sigmoid(matmul(s, transpose(c)));
}

StructureLossResult structure_loss(const std::vector<PhraseWithContext>& phrases,
                                   int negatives_per_phrase, std::mt19937_64& rng) {
    if (phrases.empty()) throw ContractError("structure loss needs at least one phrase");
    if (negatives_per_phrase < 1) throw ConfigError("need at least one negative per phrase");

    const int m = static_cast<int>(phrases.size());
    StructureLossResult res;
    res.n_phrases = m;
    Tensor one = Tensor::scalar(1.0);
    for (int i = 0; i < m; ++i) {
        std::vector<int> pool;
        for (int j = 0; j < m; ++j)
            if (j != i && phrases[j].sentence != phrases[i].sentence) pool.push_back(j);
        if (pool.empty())
            for (int j = 0; j < m; ++j)
                if (j != i) pool.push_back(j);
        if (pool.empty())
            throw SamplingError("no negative candidates for the only phrase in the batch");

        Tensor pos = sum_all(structure_prob(phrases[i].phrase.embed, phrases[i].ctx_row));
        Tensor neg_sum;
        for (int k = 0; k < negatives_per_phrase; ++k) {
            int j = pool[static_cast<std::size_t>(rng() % pool.size())];
            Tensor p = sum_all(structure_prob(phrases[j].phrase.embed, phrases[i].ctx_row));
            neg_sum = neg_sum.defined() ? add(neg_sum, p) : p;
        }
        Tensor neg_mean = scale(neg_sum, 1.0 / static_cast<double>(negatives_per_phrase));
        Tensor term = add(sub(one, pos), neg_mean);
        res.l_g = res.l_g.defined() ? add(res.l_g, term) : term;
        res.l_neg = res.l_neg.defined() ? add(res.l_neg, neg_mean) : neg_mean;
    }
    return res;
}

Tensor pretrain_loss(const Tensor& l_w, const Tensor& l_g, double gamma_pre) {
    return add(l_w, scale(l_g, gamma_pre));
}

Tensor finetune_loss(const Tensor& l_task, const Tensor& l_g, double gamma_fine) {
    return add(l_task, scale(l_g, gamma_fine));
}

}  // namespace satl
