#include "satl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "satl/error.hpp"

namespace satl {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// -log softmax(logits[row])[target], computed stably from raw values.
double row_nll(const Tensor& logits, int row, int target, int vocab) {
    double mx = logits.at({row, 0});
    for (int v = 1; v < vocab; ++v) mx = std::max(mx, logits.at({row, v}));
    double lse = 0.0;
    for (int v = 0; v < vocab; ++v) lse += std::exp(logits.at({row, v}) - mx);
    lse = mx + std::log(lse);
    return lse - logits.at({row, target});
}

std::vector<int> encode_clipped(const std::vector<std::string>& sentence, const Vocab& vocab,
                                int max_len, int* truncated) {
    std::vector<int> ids;
    ids.reserve(sentence.size());
    for (const std::string& tok : sentence) ids.push_back(vocab.encode(tok));
    if (static_cast<int>(ids.size()) > max_len) {
        ids.resize(max_len);
        if (truncated) ++*truncated;
    }
    return ids;
}

int overlap(const Span& a, const Span& b) {
    return std::max(0, std::min(a.end, b.end) - std::max(a.start, b.start) + 1);
}

double population_std(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return std::sqrt(var / static_cast<double>(xs.size()));
}

double median_of(std::vector<double> xs) {
    if (xs.empty()) return 0.0;
    std::sort(xs.begin(), xs.end());
    const std::size_t m = xs.size() / 2;
    return xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

}  // namespace

// --- masked perplexity ---

std::vector<SentenceNll> masked_nll(const Model& model,
                                    const std::vector<std::vector<std::string>>& sentences,
                                    const Vocab& vocab, std::uint64_t seed) {
    // Stream 3 is reserved for evaluation masking; training uses 1 and 2.
    std::mt19937_64 rng(substream_seed(seed, 3, 0));
    const int vsize = vocab.size();
    std::vector<SentenceNll> out;
    out.reserve(sentences.size());
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        std::vector<int> ids = encode_clipped(sentences[i], vocab, model.cfg.max_len, nullptr);
        if (ids.empty()) {
            out.push_back({});
            continue;
        }
        TokenBatch one;
        one.ids.push_back(ids);
        one.lengths.push_back(static_cast<int>(ids.size()));
        one.sentence_index.push_back(static_cast<int>(i));
        one.n_max = static_cast<int>(ids.size());
        const SentenceMask mask = mask_batch(one, vocab, rng).sentences[0];

        LayerActivations acts = model.encoder.encode(mask.input_ids);
        Tensor logits = model.encoder.mlm_logits(acts.layer_out.back());
        SentenceNll s;
        for (std::size_t k = 0; k < mask.positions.size(); ++k) {
            s.nll_sum += row_nll(logits, mask.positions[k], mask.targets[k], vsize);
            ++s.count;
        }
        out.push_back(s);
    }
    return out;
}

double masked_perplexity(const Model& model,
                         const std::vector<std::vector<std::string>>& sentences,
                         const Vocab& vocab, std::uint64_t seed) {
    double nll = 0.0;
    long count = 0;
    for (const SentenceNll& s : masked_nll(model, sentences, vocab, seed)) {
        nll += s.nll_sum;
        count += s.count;
    }
    if (count == 0) throw ContractError("perplexity needs at least one masked position");
    return std::exp(nll / static_cast<double>(count));
}

// --- span F1 ---

SpanPRF span_f1(const std::vector<std::vector<Span>>& induced,
                const std::vector<std::vector<Span>>& gold) {
    if (induced.size() != gold.size())
        throw AlignmentError("span F1 needs one gold span set per sentence");
    // Set semantics: duplicates collapse, single-token spans drop out.
    auto as_set = [](const std::vector<Span>& spans) {
        std::vector<Span> out;
        for (const Span& s : spans)
            if (s.end > s.start) out.push_back(s);
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    };
    long n_ind = 0, n_gold = 0, n_match = 0;
    for (std::size_t i = 0; i < induced.size(); ++i) {
        const std::vector<Span> a = as_set(induced[i]);
        const std::vector<Span> b = as_set(gold[i]);
        n_ind += static_cast<long>(a.size());
        n_gold += static_cast<long>(b.size());
        for (const Span& s : a)
            if (std::binary_search(b.begin(), b.end(), s)) ++n_match;
    }
    SpanPRF r;
    r.precision = n_ind ? static_cast<double>(n_match) / static_cast<double>(n_ind) : 0.0;
    r.recall = n_gold ? static_cast<double>(n_match) / static_cast<double>(n_gold) : 0.0;
    r.f1 = (r.precision + r.recall) > 0.0
               ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
               : 0.0;
    return r;
}

// --- dependency alignment ---

void DepAlignAccum::add(const Tensor& attn, const std::vector<int>& indicator, int n) {
    if (attn.shape() != std::vector<int>{n, n})
        throw AlignmentError("attention matrix does not match sentence length");
    if (indicator.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(n))
        throw AlignmentError("dependency indicator does not match sentence length");
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double a = attn.at({i, j});
            total_mass += a;
            if (indicator[static_cast<std::size_t>(i) * n + j]) mass_on_edges += a;
        }
}

double DepAlignAccum::score() const {
    return total_mass > 0.0 ? mass_on_edges / total_mass : 0.0;
}

std::vector<int> dependency_indicator(const DependencyGraph& deps, bool directed) {
    const int n = deps.size();
    std::vector<int> ind(static_cast<std::size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i) {
        const int h = deps.heads[i];
        if (h <= 0) continue;  // root attaches to nothing
        ind[static_cast<std::size_t>(i) * n + (h - 1)] = 1;
        if (!directed) ind[static_cast<std::size_t>(h - 1) * n + i] = 1;
    }
    return ind;
}

DepAlignmentResult dependency_alignment(const Model& model,
                                        const std::vector<std::vector<std::string>>& sentences,
                                        const Vocab& vocab,
                                        const std::vector<GoldSyntax>& gold, bool directed) {
    if (gold.size() != sentences.size())
        throw AlignmentError("dependency alignment needs one gold record per sentence");
    const int L = model.cfg.n_layers, H = model.cfg.n_heads;
    std::vector<std::vector<DepAlignAccum>> acc(L, std::vector<DepAlignAccum>(H));
    DepAlignmentResult out;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        if (!gold[i].deps) {
            ++out.skipped;
            continue;
        }
        const DependencyGraph& deps = *gold[i].deps;
        if (deps.size() != static_cast<int>(sentences[i].size()))
            throw AlignmentError("dependency graph size mismatch at sentence " +
                                 std::to_string(i));
        std::vector<int> ids = encode_clipped(sentences[i], vocab, model.cfg.max_len, nullptr);
        const int n = static_cast<int>(ids.size());
        if (n == 0 || n != deps.size()) {  // truncated sentences cannot be aligned
            ++out.skipped;
            continue;
        }
        const std::vector<int> ind = dependency_indicator(deps, directed);
        LayerActivations acts = model.encoder.encode(ids);
        for (int l = 0; l < L; ++l)
            for (int h = 0; h < H; ++h) acc[l][h].add(acts.attn[l][h], ind, n);
    }
    out.score.assign(L, std::vector<double>(H, 0.0));
    for (int l = 0; l < L; ++l)
        for (int h = 0; h < H; ++h) out.score[l][h] = acc[l][h].score();
    return out;
}

// --- phrase length deviation ---

double sentence_phr_dev(const std::vector<Span>& induced, const std::vector<Span>& gold) {
    if (induced.empty() || gold.empty()) return 0.0;
    std::vector<double> gaps;
    gaps.reserve(induced.size());
    for (const Span& s : induced) {
        int best = 0, best_ov = -1;
        for (std::size_t g = 0; g < gold.size(); ++g) {
            const int ov = overlap(s, gold[g]);
            if (ov > best_ov) {  // strict: the leftmost gold span wins ties
                best_ov = ov;
                best = static_cast<int>(g);
            }
        }
        const int len_ind = s.end - s.start + 1;
        const int len_gold = gold[best].end - gold[best].start + 1;
        gaps.push_back(std::abs(len_ind - len_gold));
    }
    return population_std(gaps);
}

PhrDevResult phr_dev(const std::vector<std::vector<Span>>& induced,
                     const std::vector<std::vector<Span>>& gold) {
    if (induced.size() != gold.size())
        throw AlignmentError("phrase deviation needs one gold span set per sentence");
    std::vector<double> per_sentence;
    PhrDevResult out;
    for (std::size_t i = 0; i < induced.size(); ++i) {
        if (gold[i].empty()) {
            ++out.skipped;
            continue;
        }
        per_sentence.push_back(sentence_phr_dev(induced[i], gold[i]));
    }
    if (per_sentence.empty()) return out;
    double sum = 0.0;
    for (double v : per_sentence) sum += v;
    out.mean = sum / static_cast<double>(per_sentence.size());
    out.median = median_of(per_sentence);
    return out;
}

// --- distance dispersion ---

double sentence_diff(const std::vector<double>& distances) {
    if (distances.empty()) return 0.0;
    std::size_t r = 0;
    for (std::size_t i = 1; i < distances.size(); ++i)
        if (distances[i] < distances[r]) r = i;  // leftmost minimum
    double sum = 0.0;
    for (double d : distances) sum += std::abs(d - distances[r]);
    return sum / static_cast<double>(distances.size());
}

DiffResult diff_statistic(const std::vector<std::vector<double>>& distances) {
    DiffResult out;
    out.raw.reserve(distances.size());
    for (const std::vector<double>& d : distances) out.raw.push_back(sentence_diff(d));
    if (out.raw.empty()) return out;
    const auto [mn, mx] = std::minmax_element(out.raw.begin(), out.raw.end());
    if (*mx == *mn) {
        // Every sentence disperses identically; the spread carries no signal.
        out.degenerate = true;
        out.normalized.assign(out.raw.size(), 0.0);
        return out;
    }
    out.normalized.reserve(out.raw.size());
    for (double v : out.raw) out.normalized.push_back((v - *mn) / (*mx - *mn));
    return out;
}

// --- phrase types ---

PhraseTypeResult phrase_type_proportions(const std::vector<std::vector<Span>>& induced,
                                         const std::vector<std::vector<LabeledSpan>>& gold) {
    if (induced.size() != gold.size())
        throw AlignmentError("phrase typing needs one gold constituent list per sentence");
    std::map<std::string, long> counts;
    long total = 0, len_sum = 0, other = 0;
    for (std::size_t i = 0; i < induced.size(); ++i) {
        // Later entries overwrite, so with parent-before-child listings the
        // deepest constituent labels a shared span.
        std::map<std::pair<int, int>, std::string> by_span;
        for (const LabeledSpan& g : gold[i]) by_span[{g.start, g.end}] = g.label;
        for (const Span& s : induced[i]) {
            ++total;
            len_sum += s.end - s.start + 1;
            auto it = by_span.find({s.start, s.end});
            if (it == by_span.end())
                ++other;
            else
                ++counts[it->second];
        }
    }
    PhraseTypeResult out;
    out.total = total;
    if (total == 0) return out;
    out.avg_len = static_cast<double>(len_sum) / static_cast<double>(total);
    for (const auto& [label, n] : counts)
        out.proportions.emplace_back(label, static_cast<double>(n) / static_cast<double>(total));
    if (other > 0)
        out.proportions.emplace_back("Other",
                                     static_cast<double>(other) / static_cast<double>(total));
    return out;
}

// --- full report ---

EvalReport evaluate_model(const Model& model,
                          const std::vector<std::vector<std::string>>& sentences,
                          const Vocab& vocab, const std::vector<GoldSyntax>* gold,
                          const EvalOptions& opt) {
    EvalReport rep;
    double nll = 0.0;
    long masked = 0;
    for (const SentenceNll& s : masked_nll(model, sentences, vocab, opt.seed)) {
        nll += s.nll_sum;
        masked += s.count;
    }
    if (masked == 0) throw ContractError("perplexity needs at least one masked position");
    rep.perplexity = std::exp(nll / static_cast<double>(masked));

    std::vector<std::vector<Span>> induced;
    std::vector<std::vector<double>> dists;
    induced.reserve(sentences.size());
    dists.reserve(sentences.size());
    for (const std::vector<std::string>& sent : sentences) {
        std::vector<int> ids = encode_clipped(sent, vocab, model.cfg.max_len, &rep.truncated);
        if (ids.empty()) {
            induced.emplace_back();
            dists.emplace_back();
            continue;
        }
        LayerActivations acts = model.encoder.encode(ids);
        SyntacticContexts ctx = model.syntax.build_contexts(acts, model.cfg.structure_layer,
                                                            static_cast<int>(ids.size()));
        std::vector<double> d = SyntaxHead::distance_values(model.syntax.distances(ctx.word_ctx));
        induced.push_back(segment_phrases(d, opt.lambda).spans);
        dists.push_back(std::move(d));
    }
    rep.diff = diff_statistic(dists);
    const int bins = std::max(1, opt.histogram_bins);
    rep.diff_histogram.assign(bins, 0);
    for (double v : rep.diff.normalized) {
        int b = static_cast<int>(v * bins);
        rep.diff_histogram[std::min(bins - 1, std::max(0, b))] += 1;
    }

    if (gold) {
        if (gold->size() != sentences.size())
            throw AlignmentError("evaluation needs one gold record per sentence");
        std::vector<std::vector<Span>> ind_t, gold_t;
        std::vector<std::vector<LabeledSpan>> gold_all;
        int without_tree = 0;
        for (std::size_t i = 0; i < sentences.size(); ++i) {
            if (!(*gold)[i].tree) {
                ++without_tree;
                continue;
            }
            const ConstituencyTree& tree = *(*gold)[i].tree;
            std::vector<Span> gs;
            for (const LabeledSpan& l : gold_spans(tree)) gs.push_back({l.start, l.end});
            ind_t.push_back(induced[i]);
            gold_t.push_back(std::move(gs));
            gold_all.push_back(all_constituent_spans(tree));
        }
        rep.span = span_f1(ind_t, gold_t);
        rep.phrase_dev = phr_dev(ind_t, gold_t);
        rep.phrase_dev.skipped += without_tree;
        rep.phrase_types = phrase_type_proportions(ind_t, gold_all);
        rep.dep_align = dependency_alignment(model, sentences, vocab, *gold, opt.directed);
    }
    return rep;
}

std::string eval_report_csv(const EvalReport& report) {
    std::ostringstream os;
    os << "section,key,value\n";
    os << "perplexity,ppl," << fmt(report.perplexity) << "\n";
    os << "span,precision," << fmt(report.span.precision) << "\n";
    os << "span,recall," << fmt(report.span.recall) << "\n";
    os << "span,f1," << fmt(report.span.f1) << "\n";
    for (std::size_t l = 0; l < report.dep_align.score.size(); ++l)
        for (std::size_t h = 0; h < report.dep_align.score[l].size(); ++h)
            os << "dep_align,layer" << l << ".head" << h << ","
               << fmt(report.dep_align.score[l][h]) << "\n";
    os << "dep_align,skipped," << report.dep_align.skipped << "\n";
    os << "phr_dev,mean," << fmt(report.phrase_dev.mean) << "\n";
    os << "phr_dev,median," << fmt(report.phrase_dev.median) << "\n";
    os << "phr_dev,skipped," << report.phrase_dev.skipped << "\n";
    os << "diff,degenerate," << (report.diff.degenerate ? 1 : 0) << "\n";
    for (std::size_t b = 0; b < report.diff_histogram.size(); ++b)
        os << "diff,hist" << b << "," << report.diff_histogram[b] << "\n";
    for (const auto& [label, p] : report.phrase_types.proportions)
        os << "phrase_types," << label << "," << fmt(p) << "\n";
    os << "phrase_types,avg_len," << fmt(report.phrase_types.avg_len) << "\n";
    os << "phrase_types,total," << report.phrase_types.total << "\n";
    os << "meta,truncated," << report.truncated << "\n";
    return os.str();
}

std::string eval_report_summary(const EvalReport& report) {
    std::ostringstream os;
    os << "perplexity = " << fmt(report.perplexity) << "\n";
    os << "span_precision = " << fmt(report.span.precision) << "\n";
    os << "span_recall = " << fmt(report.span.recall) << "\n";
    os << "span_f1 = " << fmt(report.span.f1) << "\n";
    for (std::size_t l = 0; l < report.dep_align.score.size(); ++l)
        for (std::size_t h = 0; h < report.dep_align.score[l].size(); ++h)
            os << "dep_align_l" << l << "_h" << h << " = "
               << fmt(report.dep_align.score[l][h]) << "\n";
    os << "phr_dev_mean = " << fmt(report.phrase_dev.mean) << "\n";
    os << "phr_dev_median = " << fmt(report.phrase_dev.median) << "\n";
    os << "diff_degenerate = " << (report.diff.degenerate ? 1 : 0) << "\n";
    for (const auto& [label, p] : report.phrase_types.proportions)
        os << "phrase_" << label << " = " << fmt(p) << "\n";
    os << "phrase_avg_len = " << fmt(report.phrase_types.avg_len) << "\n";
    return os.str();
}

}  // namespace satl
