#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fd_check.hpp"
#include "satl/encoder.hpp"
#include "satl/error.hpp"
#include "satl/objectives.hpp"
#include "satl/syntax.hpp"

using namespace satl;

namespace {

EncoderConfig four_layer_config() {
    EncoderConfig cfg;
    cfg.vocab_size = 12;
    cfg.n_layers = 4;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.d_ff = 16;
    cfg.max_len = 10;
    cfg.structure_layer = 2;
    return cfg;
}

PhraseWithContext make_phrase(std::vector<double> s, std::vector<double> c, int sentence) {
    const int d = static_cast<int>(s.size());
    PhraseWithContext p;
    p.phrase.span = Span{1, 1};
    p.phrase.embed = Tensor::from(std::move(s), {1, d});
    p.ctx_row = Tensor::from(std::move(c), {1, d});
    p.sentence = sentence;
    return p;
}

double grad_l1(const Tensor& t) {
    double s = 0;
    for (double g : t.grad()) s += std::fabs(g);
    return s;
}

}  // namespace

TEST_CASE("uniform logits cost ln V per masked position") {
    const int v = 11;
    MaskedPrediction p;
    p.logits = Tensor::zeros({3, v});
    p.positions = {0, 2};
    p.targets = {4, 7};
    Tensor loss = mlm_loss({p});
    CHECK(std::fabs(loss.value() - std::log(static_cast<double>(v))) < 1e-12);
}

TEST_CASE("masked-LM loss matches the frozen two-logit value") {
    MaskedPrediction p;
    p.logits = Tensor::from({0.0, std::log(3.0)}, {1, 2});
    p.positions = {0};
    p.targets = {1};
    CHECK(std::fabs(mlm_loss({p}).value() - 0.28768) < 1e-5);  // -ln 0.75
}

TEST_CASE("confident correct logits drive the loss to zero") {
    MaskedPrediction p;
    p.logits = Tensor::from({50.0, 0.0, 0.0}, {1, 3});
    p.positions = {0};
    p.targets = {0};
    CHECK(mlm_loss({p}).value() < 1e-6);
}

TEST_CASE("loss averages across sentences by masked-position count") {
    MaskedPrediction a, b;
    a.logits = Tensor::from({0.0, std::log(3.0)}, {1, 2});
    a.positions = {0};
    a.targets = {1};
    b.logits = Tensor::from({0.0, 0.0, 1.0, 2.0, 3.0, 4.0}, {3, 2});
    b.positions = {0, 2};
    b.targets = {0, 1};
    double la = -std::log(0.75);
    double lb0 = -std::log(0.5);
    double lb2 = -std::log(std::exp(4.0) / (std::exp(3.0) + std::exp(4.0)));
    CHECK(std::fabs(mlm_loss({a, b}).value() - (la + lb0 + lb2) / 3.0) < 1e-12);

    MaskedPrediction empty;
    empty.logits = Tensor::zeros({1, 2});
    CHECK_THROWS_AS(mlm_loss({empty}), ContractError);
    empty.positions = {0};
    CHECK_THROWS_AS(mlm_loss({empty}), ContractError);  // targets missing
}

TEST_CASE("cross entropy on a single row") {
    Tensor logits = Tensor::from({0.0, std::log(3.0)}, {1, 2});
    CHECK(std::fabs(cross_entropy(logits, 1).value() - 0.28768) < 1e-5);
    CHECK_THROWS_AS(cross_entropy(logits, 2), ContractError);
    CHECK_THROWS_AS(cross_entropy(Tensor::zeros({2, 2}), 0), ShapeError);
}

TEST_CASE("structure probability is the sigmoid of the dot product") {
    Tensor s = Tensor::from({1.0, 0.0}, {1, 2});
    Tensor c = Tensor::from({0.0, 1.0}, {1, 2});
    CHECK(structure_prob(s, c).at({0, 0}) == 0.5);
    Tensor c2 = Tensor::from({std::log(3.0), 0.0}, {1, 2});
    CHECK(std::fabs(structure_prob(s, c2).at({0, 0}) - 0.75) < 1e-12);
    Tensor c3 = Tensor::from({-200.0, 0.0}, {1, 2});
    CHECK(structure_prob(s, c3).at({0, 0}) < 1e-12);
    CHECK(structure_prob(s, c3).at({0, 0}) > 0.0);

    std::mt19937_64 rng(4);
    for (int t = 0; t < 100; ++t) {
        Tensor a = Tensor::randn({1, 5}, 1.0, rng);
        Tensor b = Tensor::randn({1, 5}, 1.0, rng);
        double p = structure_prob(a, b).at({0, 0});
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("structure loss with a single negative candidate is exact") {
    // s0.c0 = ln 3 -> 0.75; s1.c0 = 0 -> 0.5; s1.c1 = ln 3 -> 0.75; s0.c1 = 0 -> 0.5
    auto p0 = make_phrase({std::log(3.0), 0.0}, {1.0, 0.0}, 0);
    auto p1 = make_phrase({0.0, std::log(3.0)}, {0.0, 1.0}, 1);
    std::mt19937_64 rng(7);
    StructureLossResult r = structure_loss({p0, p1}, 5, rng);
    CHECK(r.n_phrases == 2);
    // l_g = (1-0.75) + 0.5 + (1-0.75) + 0.5; every draw hits the lone candidate
    CHECK(std::fabs(r.l_g.value() - 1.5) < 1e-12);
    CHECK(std::fabs(r.l_neg.value() - 1.0) < 1e-12);
}

TEST_CASE("structure loss follows positive-plus-mean-negative arithmetic") {
    // Three phrases in three sentences; replay the generator to know the draws.
    std::vector<PhraseWithContext> ps = {
        make_phrase({std::log(3.0), 0.0, 0.0}, {1.0, 0.0, 0.0}, 0),
        make_phrase({0.0, 1.3, 0.0}, {0.0, 1.0, 0.0}, 1),
        make_phrase({0.0, 0.0, -0.4}, {0.0, 0.0, 1.0}, 2),
    };
    auto dot = [&](int i, int j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += ps[i].phrase.embed.at({0, k}) * ps[j].ctx_row.at({0, k});
        return s;
    };
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

    const int nneg = 2;
    std::mt19937_64 rng(99), replay(99);
    StructureLossResult r = structure_loss(ps, nneg, rng);

    double expect_lg = 0, expect_neg = 0;
    for (int i = 0; i < 3; ++i) {
        std::vector<int> pool;
        for (int j = 0; j < 3; ++j)
            if (j != i) pool.push_back(j);
        double neg = 0;
        for (int k = 0; k < nneg; ++k) neg += sig(dot(pool[replay() % pool.size()], i));
        neg /= nneg;
        expect_lg += (1.0 - sig(dot(i, i))) + neg;
        expect_neg += neg;
    }
    CHECK(std::fabs(r.l_g.value() - expect_lg) < 1e-12);
    CHECK(std::fabs(r.l_neg.value() - expect_neg) < 1e-12);
}

TEST_CASE("structure loss prefers negatives from other sentences") {
    // Phrase 0 sits alone in sentence 0; phrases 1 and 2 share sentence 1.
    // Every cross-sentence candidate scores sigmoid(0) = 0.5 against the
    // opposing context, while same-sentence pairs would score sigmoid(2) or
    // sigmoid(-3). The loss is therefore exactly determined iff the pool is
    // restricted to other sentences.
    auto far = make_phrase({7.0, 0.0}, {1.0, 0.0}, 0);
    auto near1 = make_phrase({0.0, 2.0}, {0.0, 1.0}, 1);
    auto near2 = make_phrase({0.0, -3.0}, {0.0, 1.0}, 1);
    std::mt19937_64 rng(1);
    StructureLossResult r = structure_loss({far, near1, near2}, 4, rng);
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    double pos_term = (1.0 - sig(7.0)) + (1.0 - sig(2.0)) + (1.0 - sig(-3.0));
    CHECK(std::fabs(r.l_neg.value() - 1.5) < 1e-12);
    CHECK(std::fabs(r.l_g.value() - (pos_term + 1.5)) < 1e-12);

    std::mt19937_64 rng2(2);
    CHECK_THROWS_AS(structure_loss({far}, 2, rng2), SamplingError);
    CHECK_THROWS_AS(structure_loss({far, near1}, 0, rng2), ConfigError);
    // Same-sentence fallback when no other sentence exists.
    StructureLossResult fb = structure_loss({near1, near2}, 3, rng2);
    CHECK(fb.n_phrases == 2);
}

TEST_CASE("loss compositions match the frozen arithmetic") {
    Tensor lw = Tensor::scalar(2.0);
    Tensor lg = Tensor::scalar(0.6);
    CHECK(std::fabs(pretrain_loss(lw, lg, 0.5).value() - 2.3) < 1e-12);
    Tensor lt = Tensor::scalar(0.9);
    Tensor lg2 = Tensor::scalar(1.0);
    CHECK(std::fabs(finetune_loss(lt, lg2, 0.23).value() - 1.13) < 1e-12);
    CHECK(pretrain_loss(lw, lg, 0.0).value() == lw.value());

    std::mt19937_64 rng(12);
    for (int t = 0; t < 50; ++t) {
        double a = static_cast<double>(rng()) / 1e18;
        double b = static_cast<double>(rng()) / 1e18;
        Tensor ta = Tensor::scalar(a), tb = Tensor::scalar(b);
        // Bitwise identity with scalar arithmetic: total = a + gamma * b.
        CHECK(pretrain_loss(ta, tb, 0.5).value() == a + 0.5 * b);
        CHECK(finetune_loss(ta, tb, 0.23).value() == a + 0.23 * b);
    }
}

namespace {

// The 0.02-scale construction init keeps pre-norm rows nearly constant, so
// attention stays near-uniform and score gradients underflow at depth.
// Gradient tests run at this healthier operating point instead.
std::vector<Tensor> recondition(Encoder& enc, SyntaxHead& head, unsigned seed) {
    std::mt19937_64 prng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<Tensor> params;
    for (const auto& [name, t] : enc.named_params()) {
        Tensor p = t;
        const bool is_gain = name.size() > 5 && name.substr(name.size() - 5) == ".gain";
        for (double& x : p.mutable_data())
            x = is_gain ? 1.0 + 0.2 * dist(prng) : 0.35 * dist(prng);
        params.push_back(p);
    }
    for (const auto& [name, t] : head.named_params()) {
        Tensor p = t;
        if (name != "alpha.logits")
            for (double& x : p.mutable_data()) x = 0.35 * dist(prng);
        params.push_back(p);
    }
    return params;
}

// Assembles the multi-task objective over a fixed two-sentence batch with a
// frozen masking plan and segmentation, fresh negative draws per call.
LossBreakdown build_pretrain(Encoder& enc, SyntaxHead& head, double gamma,
                             const std::vector<PhraseSegmentation>* frozen_seg = nullptr) {
    std::vector<std::vector<int>> masked = {{3, 5, 2, 4, 6}, {6, 8, 9, 3}};
    std::vector<std::vector<int>> positions = {{1, 3}, {0, 2}};
    std::vector<std::vector<int>> targets = {{5, 4}, {6, 9}};

    std::vector<MaskedPrediction> preds;
    std::vector<PhraseWithContext> phrases;
    for (std::size_t s = 0; s < masked.size(); ++s) {
        LayerActivations acts = enc.encode(masked[s]);
        MaskedPrediction mp;
        mp.logits = enc.mlm_logits(acts.layer_out.back());
        mp.positions = positions[s];
        mp.targets = targets[s];
        preds.push_back(std::move(mp));

        const int n = static_cast<int>(masked[s].size());
        SyntacticContexts ctx = head.build_contexts(acts, 2, n);
        Tensor d = head.distances(ctx.word_ctx);
        PhraseSegmentation seg =
            frozen_seg ? (*frozen_seg)[s]
                       : segment_phrases(SyntaxHead::distance_values(d), 0.5);
        for (PhraseEmbedding& pe : head.phrase_embed(seg, d, ctx.word_ctx)) {
            PhraseWithContext pc;
            pc.ctx_row = slice_rows(ctx.phrasal_ctx, pe.span.start - 1, pe.span.start);
            pc.phrase = std::move(pe);
            pc.sentence = static_cast<int>(s);
            phrases.push_back(std::move(pc));
        }
    }
    std::mt19937_64 neg_rng(42);
    StructureLossResult sl = structure_loss(phrases, 5, neg_rng);
    LossBreakdown lb;
    lb.l_w = mlm_loss(preds);
    lb.l_g = sl.l_g;
    lb.l_neg = sl.l_neg;
    lb.total = pretrain_loss(lb.l_w, lb.l_g, gamma);
    return lb;
}

}  // namespace

TEST_CASE("multi-task gradient reaches every module; gamma gates the structure path") {
    std::mt19937_64 rng(13);
    Encoder enc(four_layer_config(), rng);
    SyntaxHead head(8, rng);
    recondition(enc, head, 107);
    auto zero_all = [&] {
        for (const auto& [n, t] : enc.named_params()) Tensor(t).zero_grad();
        for (const auto& [n, t] : head.named_params()) Tensor(t).zero_grad();
    };

    zero_all();
    backward(build_pretrain(enc, head, 0.5).total);
    CHECK(grad_l1(enc.tok_embed) > 0.0);
    CHECK(grad_l1(enc.out_bias) > 0.0);
    for (int l = 0; l < 4; ++l) CHECK(grad_l1(enc.layers[l].wq) > 0.0);
    CHECK(grad_l1(head.alpha_logits) > 0.0);
    CHECK(grad_l1(head.conv_kernel) > 0.0);
    CHECK(grad_l1(head.out_weight) > 0.0);

    // gamma = 0: the structure term is computed but unweighted, so the
    // structure-only parameters get exactly zero gradient.
    zero_all();
    backward(build_pretrain(enc, head, 0.0).total);
    CHECK(grad_l1(head.alpha_logits) == 0.0);
    CHECK(grad_l1(head.conv_kernel) == 0.0);
    CHECK(grad_l1(head.out_weight) == 0.0);
    CHECK(grad_l1(enc.tok_embed) > 0.0);
}

TEST_CASE("doubling gamma doubles the structure gradients bit-exactly") {
    std::mt19937_64 rng(14);
    Encoder enc(four_layer_config(), rng);
    SyntaxHead head(8, rng);
    recondition(enc, head, 109);

    // Freeze the segmentation so both runs share every discrete choice.
    std::vector<PhraseSegmentation> seg;
    {
        std::vector<std::vector<int>> masked = {{3, 5, 2, 4, 6}, {6, 8, 9, 3}};
        for (const auto& ids : masked) {
            LayerActivations acts = enc.encode(ids);
            SyntacticContexts ctx = head.build_contexts(acts, 2, static_cast<int>(ids.size()));
            seg.push_back(segment_phrases(
                SyntaxHead::distance_values(head.distances(ctx.word_ctx)), 0.5));
        }
    }
    auto grads_at = [&](double gamma) {
        for (const auto& [n, t] : head.named_params()) Tensor(t).zero_grad();
        backward(build_pretrain(enc, head, gamma, &seg).total);
        std::vector<std::vector<double>> out;
        for (const auto& [n, t] : head.named_params()) out.push_back(t.grad());
        return out;
    };
    auto g1 = grads_at(0.23);
    auto g2 = grads_at(0.46);
    for (std::size_t p = 0; p < g1.size(); ++p) {
        REQUIRE(g1[p].size() == g2[p].size());
        for (std::size_t c = 0; c < g1[p].size(); ++c) CHECK(g2[p][c] == 2.0 * g1[p][c]);
    }
}

TEST_CASE("finite differences validate the full pretrain objective") {
    std::mt19937_64 rng(15);
    Encoder enc(four_layer_config(), rng);
    SyntaxHead head(8, rng);
    std::vector<Tensor> params = recondition(enc, head, 107);

    std::vector<PhraseSegmentation> seg;
    {
        std::vector<std::vector<int>> masked = {{3, 5, 2, 4, 6}, {6, 8, 9, 3}};
        for (const auto& ids : masked) {
            LayerActivations acts = enc.encode(ids);
            SyntacticContexts ctx = head.build_contexts(acts, 2, static_cast<int>(ids.size()));
            seg.push_back(segment_phrases(
                SyntaxHead::distance_values(head.distances(ctx.word_ctx)), 0.5));
        }
    }
    auto build = [&] { return build_pretrain(enc, head, 0.5, &seg).total; };
    auto r = fdcheck::check_gradients(params, build, 1e-3, 3);
    CHECK(r.checked > 100);
    CHECK(r.max_rel_err < 1e-4);
}
