#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fd_check.hpp"
#include "satl/encoder.hpp"
#include "satl/error.hpp"
#include "satl/syntax.hpp"

using namespace satl;

namespace {

// Independent scalar transcription of the greedy membership procedure,
// kept deliberately separate from the library implementation.
std::vector<Span> brute_segment(const std::vector<double>& d, double lam) {
    const int n = static_cast<int>(d.size());
    std::vector<Span> spans;
    int open = 0;
    for (int j = 1; j < n; ++j) {
        double p = 1.0;
        for (int k = open; k < j; ++k) p *= 1.0 / (1.0 + std::exp(-(d[j] - d[k])));
        if (!(p > lam)) {
            spans.push_back(Span{open + 1, j});
            open = j;
        }
    }
    spans.push_back(Span{open + 1, n});
    return spans;
}

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

GoldSyntax fixture_gold() {
    GoldSyntax g;
    g.tree = parse_ptb_bracketed("(S (NP the dog) (VP barks))");
    g.tokens = g.tree->tokens;
    DependencyGraph dep;
    dep.tokens = g.tokens;
    dep.heads = {2, 3, 0};
    g.deps = dep;
    return g;
}

}  // namespace

TEST_CASE("membership probability matches the frozen scalar values") {
    CHECK(membership_prob({1.0, 1.0}, 1, 1, 2) == 0.5);
    CHECK(std::fabs(membership_prob({1.0, 2.0}, 1, 1, 2) - 0.73106) < 1e-5);
    CHECK(std::fabs(membership_prob({1.0, 2.0, 0.5}, 1, 2, 3) - 0.06888) < 1e-5);
    CHECK_THROWS_AS(membership_prob({1.0, 2.0}, 1, 1, 3), ContractError);
    CHECK_THROWS_AS(membership_prob({1.0, 2.0}, 1, 2, 2), ContractError);
    CHECK_THROWS_AS(membership_prob({1.0, 2.0}, 0, 0, 1), ContractError);
}

TEST_CASE("segmentation follows the frozen three-token example") {
    PhraseSegmentation seg = segment_phrases({1.0, 2.0, 0.5}, 0.5);
    CHECK(seg.spans == std::vector<Span>{{1, 2}, {3, 3}});
    REQUIRE(seg.membership_probs.size() == 3);
    CHECK(seg.membership_probs[0] == 1.0);
    CHECK(std::fabs(seg.membership_probs[1] - 0.73106) < 1e-5);
    CHECK(seg.membership_probs[2] == 1.0);  // opens its own phrase
}

TEST_CASE("threshold endpoints give the extreme segmentations") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 20; ++t) {
        const int n = 1 + static_cast<int>(rng() % 9);
        std::vector<double> d(n);
        for (double& x : d) x = static_cast<double>(rng() % 2000) / 100.0 - 10.0;
        PhraseSegmentation lo = segment_phrases(d, 0.0);
        CHECK(lo.spans == std::vector<Span>{{1, n}});
        PhraseSegmentation hi = segment_phrases(d, 1.0);
        CHECK(static_cast<int>(hi.spans.size()) == n);
        for (int i = 0; i < n; ++i) CHECK(hi.spans[i] == Span{i + 1, i + 1});
    }
}

TEST_CASE("segmentation agrees with the brute-force simulation") {
    std::mt19937_64 rng(17);
    for (double lam : {0.3, 0.5, 0.7}) {
        for (int t = 0; t < 1000; ++t) {
            const int n = 1 + static_cast<int>(rng() % 12);
            std::vector<double> d(n);
            for (double& x : d) x = static_cast<double>(rng() % 4000) / 500.0 - 4.0;
            PhraseSegmentation seg = segment_phrases(d, lam);
            CHECK(seg.spans == brute_segment(d, lam));
            // Partition property: exhaustive, disjoint, ordered.
            int next = 1;
            for (const Span& sp : seg.spans) {
                REQUIRE(sp.start == next);
                REQUIRE(sp.end >= sp.start);
                next = sp.end + 1;
            }
            REQUIRE(next == n + 1);
            // A token admitted at lambda = 0.5 into a 2-token span has a
            // strictly larger distance than the opener.
            if (lam == 0.5)
                for (const Span& sp : seg.spans)
                    if (sp.end == sp.start + 1) CHECK(d[sp.start - 1] < d[sp.end - 1]);
        }
    }
}

TEST_CASE("raising the threshold can shift boundaries, not only split") {
    // Spans at a higher threshold are not always nested inside lower-threshold
    // spans: the greedy opener changes once an early pair separates.
    std::vector<double> d = {0.0, 0.01, 0.87};
    CHECK(segment_phrases(d, 0.5).spans == std::vector<Span>{{1, 2}, {3, 3}});
    CHECK(segment_phrases(d, 0.7).spans == std::vector<Span>{{1, 1}, {2, 3}});
}

TEST_CASE("two-token opening absorbs the follower unconditionally") {
    std::vector<double> d = {1.0, 0.0, 5.0};
    CHECK(segment_phrases(d, 0.5).spans == std::vector<Span>{{1, 1}, {2, 3}});
    PhraseSegmentation seg = segment_phrases(d, 0.5, true);
    CHECK(seg.spans == std::vector<Span>{{1, 3}});
    CHECK(std::fabs(seg.membership_probs[1] - 0.268941) < 1e-5);  // recorded, not thresholded
    CHECK(segment_phrases({2.0}, 0.5, true).spans == std::vector<Span>{{1, 1}});
}

TEST_CASE("segmentation input validation") {
    CHECK_THROWS_AS(segment_phrases({}, 0.5), ContractError);
    CHECK_THROWS_AS(segment_phrases({1.0}, -0.1), ConfigError);
    CHECK_THROWS_AS(segment_phrases({1.0}, 1.5), ConfigError);
    CHECK_THROWS_AS(segment_phrases({1.0, std::nan("")}, 0.5), NumericError);
}

TEST_CASE("context mixing starts at the published coefficients") {
    std::mt19937_64 rng(5);
    SyntaxHead head(8, rng);
    Tensor alphas = softmax_lastdim(head.alpha_logits);
    CHECK(std::fabs(alphas.at({0}) - 0.35) < 1e-15);
    CHECK(std::fabs(alphas.at({1}) - 0.40) < 1e-15);
    CHECK(std::fabs(alphas.at({2}) - 0.25) < 1e-15);
    double sum = alphas.at({0}) + alphas.at({1}) + alphas.at({2});
    CHECK(std::fabs(sum - 1.0) < 1e-12);
}

TEST_CASE("word context is the layer below; identical layers collapse the mix") {
    std::mt19937_64 rng(6);
    SyntaxHead head(4, rng);
    Tensor h = Tensor::from({1, 2, 3, 4, 5, 6, 7, 8}, {2, 4});
    LayerActivations acts;
    for (int i = 0; i < 4; ++i) acts.layer_out.push_back(h);  // 3 layers + embedding
    SyntacticContexts ctx = head.build_contexts(acts, 2, 2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 4; ++j) {
            CHECK(ctx.word_ctx.at({i, j}) == h.at({i, j}));
            CHECK(std::fabs(ctx.phrasal_ctx.at({i, j}) - h.at({i, j})) < 1e-9);
        }
    CHECK_THROWS_AS(head.build_contexts(acts, 1, 2), ConfigError);
    CHECK_THROWS_AS(head.build_contexts(acts, 3, 2), ConfigError);
    CHECK_THROWS_AS(head.build_contexts(acts, 2, 0), ContractError);
}

TEST_CASE("zeroed distance head emits all-zero distances") {
    std::mt19937_64 rng(7);
    SyntaxHead head(8, rng);
    for (auto& [name, t] : head.named_params()) {
        if (name == "alpha.logits") continue;
        Tensor p = t;
        for (double& x : p.mutable_data()) x = 0.0;
    }
    Tensor ctx = Tensor::from(std::vector<double>(5 * 8, 0.3), {5, 8});
    Tensor d = head.distances(ctx);
    CHECK(d.shape() == std::vector<int>{5, 1});
    for (int i = 0; i < 5; ++i) CHECK(d.at({i, 0}) == 0.0);
}

TEST_CASE("distance gradient reaches layers at and below l-1 only") {
    std::mt19937_64 rng(8);
    Encoder enc(four_layer_config(), rng);
    SyntaxHead head(8, rng);
    for (const auto& [name, t] : enc.named_params()) {
        Tensor p = t;
        p.zero_grad();
    }
    LayerActivations acts = enc.encode({3, 5, 7, 4});
    SyntacticContexts ctx = head.build_contexts(acts, 2, 4);
    backward(sum_all(head.distances(ctx.word_ctx)));

    auto grad_norm = [](const Tensor& t) {
        double s = 0;
        for (double g : t.grad()) s += std::fabs(g);
        return s;
    };
    CHECK(grad_norm(enc.tok_embed) > 0.0);
    CHECK(grad_norm(enc.layers[0].wq) > 0.0);
    CHECK(grad_norm(enc.layers[1].wq) == 0.0);  // word context stops at h^{l-1}
    CHECK(grad_norm(enc.layers[2].wq) == 0.0);
    CHECK(grad_norm(enc.layers[3].wq) == 0.0);
    CHECK(grad_norm(head.alpha_logits) == 0.0);  // alphas only enter the phrasal mix
}

TEST_CASE("phrasal attention reproduces the frozen two-token example") {
    std::mt19937_64 rng(9);
    SyntaxHead head(4, rng);
    Tensor cpsi = Tensor::from({1, 0, 0, 0, 0, 1, 0, 0}, {2, 4});
    Tensor d = Tensor::from({1.0, 2.0}, {2, 1});
    PhraseSegmentation seg;
    seg.spans = {Span{1, 2}};
    seg.membership_probs = {1.0, 0.731};
    std::vector<PhraseEmbedding> pes = head.phrase_embed(seg, d, cpsi);
    REQUIRE(pes.size() == 1);
    CHECK(pes[0].weights.shape() == std::vector<int>{1, 2});
    CHECK(std::fabs(pes[0].weights.at({0, 0}) - 0.3866) < 1e-4);
    CHECK(std::fabs(pes[0].weights.at({0, 1}) - 0.6134) < 1e-4);
    // s_m mixes the rows with exactly those weights.
    CHECK(std::fabs(pes[0].embed.at({0, 0}) - pes[0].weights.at({0, 0})) < 1e-12);
    CHECK(std::fabs(pes[0].embed.at({0, 1}) - pes[0].weights.at({0, 1})) < 1e-12);
}

TEST_CASE("phrasal attention weights are a distribution per span") {
    std::mt19937_64 rng(10);
    SyntaxHead head(6, rng);
    const int n = 7;
    Tensor ctx = Tensor::randn({n, 6}, 1.0, rng, true);
    Tensor dvals = Tensor::randn({n, 1}, 1.0, rng, true);
    PhraseSegmentation seg = segment_phrases(SyntaxHead::distance_values(dvals), 0.5);
    std::vector<PhraseEmbedding> pes = head.phrase_embed(seg, dvals, ctx);
    CHECK(pes.size() == seg.spans.size());
    for (const PhraseEmbedding& pe : pes) {
        double s = 0;
        for (int j = 0; j < pe.weights.dim(1); ++j) {
            double w = pe.weights.at({0, j});
            CHECK(w >= 0.0);
            s += w;
        }
        CHECK(std::fabs(s - 1.0) < 1e-9);
        if (pe.span.start == pe.span.end) CHECK(pe.weights.at({0, 0}) == 1.0);
    }
}

TEST_CASE("finite differences validate the distance-to-phrase graph") {
    std::mt19937_64 rng(11);
    Encoder enc(four_layer_config(), rng);
    SyntaxHead head(8, rng);
    std::mt19937_64 prng(103);
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

    std::vector<int> ids = {3, 5, 7, 4, 6};
    // The segmentation is a discrete decision: freeze it once, then check
    // gradients of the differentiable remainder of the pipeline.
    PhraseSegmentation seg;
    {
        LayerActivations acts = enc.encode(ids);
        SyntacticContexts ctx = head.build_contexts(acts, 2, 5);
        seg = segment_phrases(SyntaxHead::distance_values(head.distances(ctx.word_ctx)), 0.5);
    }
    auto build = [&] {
        LayerActivations acts = enc.encode(ids);
        SyntacticContexts ctx = head.build_contexts(acts, 2, 5);
        Tensor d = head.distances(ctx.word_ctx);
        Tensor total = Tensor::scalar(0.0);
        for (const PhraseEmbedding& pe : head.phrase_embed(seg, d, ctx.word_ctx)) {
            Tensor c = slice_rows(ctx.phrasal_ctx, pe.span.start - 1, pe.span.start);
            total = add(total, sum_all(sigmoid(matmul(pe.embed, transpose(c)))));
        }
        return total;
    };
    auto r = fdcheck::check_gradients(params, build, 1e-5, 4);
    CHECK(r.checked > 100);
    CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("gold injection keeps treebank spans and gold distances") {
    GoldSyntax g = fixture_gold();
    auto [d, seg] = inject_gold(g, 3, 0.7);
    CHECK(d == std::vector<double>{2, 1, 0});
    CHECK(seg.spans == std::vector<Span>{{1, 2}, {3, 3}});
    REQUIRE(seg.membership_probs.size() == 3);
    CHECK(seg.membership_probs[0] == 1.0);
    // p*("dog") against the opened noun phrase: sigmoid(1 - 2)
    CHECK(std::fabs(seg.membership_probs[1] - 0.268941) < 1e-5);
    CHECK(seg.membership_probs[2] == 1.0);

    auto [d2, seg2] = inject_gold(g, 3, 0.7, false, GoldDistanceMode::ConstHeight);
    CHECK(d2 == std::vector<double>{0, 0, 0});
    CHECK(seg2.spans == seg.spans);

    CHECK_THROWS_AS(inject_gold(g, 4, 0.7), AlignmentError);
}

TEST_CASE("gold injection can re-segment from the distances instead") {
    GoldSyntax g = fixture_gold();
    auto [d, seg] = inject_gold(g, 3, 0.7, true);
    CHECK(d == std::vector<double>{2, 1, 0});
    // Depth decreases toward the root, so every adjacent test fails at 0.7.
    CHECK(seg.spans == std::vector<Span>{{1, 1}, {2, 2}, {3, 3}});
}

TEST_CASE("induction dump line matches the documented format") {
    std::string line = format_induction_line({"the", "dog", "barks"}, {1.0, 2.0, 0.5},
                                             {Span{1, 2}, Span{3, 3}});
    CHECK(line == "the:1.00 dog:2.00 barks:0.50 ||| (1,2) (3,3)");
}
