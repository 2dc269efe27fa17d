#include "satl/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "satl/error.hpp"
#include "satl/objectives.hpp"

namespace satl {

std::string train_mode_name(TrainMode mode) {
    return mode == TrainMode::Unsupervised ? "unsupervised" : "supervised";
}

TrainMode train_mode_from(const std::string& name) {
    if (name == "unsupervised") return TrainMode::Unsupervised;
    if (name == "supervised") return TrainMode::Supervised;
    throw ConfigError("unknown mode: " + name);
}

void TrainConfig::validate() const {
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!(gamma_pre >= 0) || !(gamma_fine >= 0)) throw ConfigError("gamma must be non-negative");
    if (!(lambda_unsup >= 0 && lambda_unsup <= 1) || !(lambda_sup >= 0 && lambda_sup <= 1))
        throw ConfigError("lambda must lie in [0, 1]");
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw ConfigError("");
        return v;
    } catch (const ConfigError&) {
        throw ConfigError("bad value for " + key + ": " + value);
    } catch (const std::exception&) {
        throw ConfigError("bad value for " + key + ": " + value);
    }
}

long long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        long long v = std::stoll(value, &pos);
        if (pos != value.size()) throw ConfigError("");
        return v;
    } catch (const ConfigError&) {
        throw ConfigError("bad value for " + key + ": " + value);
    } catch (const std::exception&) {
        throw ConfigError("bad value for " + key + ": " + value);
    }
}

}  // namespace

void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "lr") cfg.lr = parse_double(key, value);
    else if (key == "weight_decay") cfg.weight_decay = parse_double(key, value);
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "gamma_pre") cfg.gamma_pre = parse_double(key, value);
    else if (key == "gamma_fine") cfg.gamma_fine = parse_double(key, value);
    else if (key == "lambda_unsup") cfg.lambda_unsup = parse_double(key, value);
    else if (key == "lambda_sup") cfg.lambda_sup = parse_double(key, value);
    else if (key == "mode") cfg.mode = train_mode_from(value);
    else throw ConfigError("unknown config key: " + key);
}

TrainConfig parse_train_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

TrainConfig read_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_train_config_text(buf.str());
}

std::string format_train_config(const TrainConfig& cfg) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "lr = %.17g\nweight_decay = %.17g\nbatch_size = %d\nepochs = %d\n"
                  "seed = %llu\ngamma_pre = %.17g\ngamma_fine = %.17g\n"
                  "lambda_unsup = %.17g\nlambda_sup = %.17g\nmode = %s\n",
                  cfg.lr, cfg.weight_decay, cfg.batch_size, cfg.epochs,
                  static_cast<unsigned long long>(cfg.seed), cfg.gamma_pre, cfg.gamma_fine,
                  cfg.lambda_unsup, cfg.lambda_sup, train_mode_name(cfg.mode).c_str());
    return buf;
}

Model::Model(const EncoderConfig& config, std::mt19937_64& rng)
    : cfg(config), encoder(config, rng), syntax(config.d_model, rng) {}

void Model::add_classifier(int labels, std::mt19937_64& rng) {
    if (labels < 2) throw ConfigError("classifier needs at least 2 labels");
    n_labels = labels;
    cls_weight = Tensor::randn({cfg.d_model, labels}, 0.02, rng, true);
    cls_bias = Tensor::zeros({1, labels}, true);
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out = encoder.named_params();
    const auto& s = syntax.named_params();
    out.insert(out.end(), s.begin(), s.end());
    if (n_labels > 0) {
        out.emplace_back("cls.weight", cls_weight);
        out.emplace_back("cls.bias", cls_bias);
    }
    return out;
}

std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t epoch) {
    // splitmix64 finalizer over a combined index keeps streams uncorrelated.
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream * 0x100000001B3ULL + epoch + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

MaskingPlan mask_batch(const TokenBatch& batch, const Vocab& vocab, std::mt19937_64& rng) {
    if (vocab.size() <= Vocab::kMask) throw VocabError("vocabulary lacks the mask token");
    MaskingPlan plan;
    plan.sentences.resize(batch.rows());
    for (int r = 0; r < batch.rows(); ++r) {
        const int n = batch.lengths[r];
        SentenceMask& sm = plan.sentences[r];
        sm.input_ids.assign(batch.ids[r].begin(), batch.ids[r].begin() + n);
        if (n == 0) continue;
        int count = std::max(1, static_cast<int>(std::lround(0.15 * n)));
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        for (int i = 0; i < count; ++i) {
            int j = i + static_cast<int>(rng() % static_cast<std::uint64_t>(n - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(count);
        std::sort(idx.begin(), idx.end());
        for (int pos : idx) {
            sm.positions.push_back(pos);
            sm.targets.push_back(sm.input_ids[pos]);
            double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            if (u < 0.8) {
                sm.input_ids[pos] = Vocab::kMask;
            } else if (u < 0.9 && vocab.size() > 3) {
                sm.input_ids[pos] =
                    3 + static_cast<int>(rng() % static_cast<std::uint64_t>(vocab.size() - 3));
            }  // else keep the surface token
        }
    }
    return plan;
}

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, double lr, double weight_decay)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay) {
    std::unordered_set<const TensorNode*> seen;
    for (const auto& [name, t] : params_) {
        if (!t.defined() || !t.requires_grad())
            throw ContractError("optimizer parameter not trainable: " + name);
        if (!seen.insert(t.node()).second)
            throw ContractError("parameter registered twice: " + name);
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

void Adam::step() {
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, t_);
    const double bc2 = 1.0 - std::pow(b2, t_);
    for (std::size_t p = 0; p < params_.size(); ++p) {
        const std::vector<double>& g = params_[p].second.grad();
        std::vector<double>& th = params_[p].second.mutable_data();
        std::vector<double>& m = m_[p];
        std::vector<double>& v = v_[p];
        for (std::size_t i = 0; i < th.size(); ++i) {
            if (!std::isfinite(g[i]))
                throw NumericError("non-finite gradient in " + params_[p].first);
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            th[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps) + wd_ * th[i]);
        }
    }
}

namespace {

void log_header(std::ostream* log) {
    if (log) *log << "step,l_w,l_g,l_neg,l_task,total,ppl\n";
}

void log_row(std::ostream* log, int step, double lw, double lg, double lneg, double ltask,
             double total, double ppl) {
    if (!log) return;
    char buf[320];
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", step, lw, lg,
                  lneg, ltask, total, ppl);
    *log << buf;
}

// Structure branch for one sentence: contexts at the structure layer, then
// distances and a segmentation (induced, or gold-injected when gold != null),
// then phrase embeddings paired with their opening-token contexts.
void collect_phrases(Model& model, const LayerActivations& acts, int n, int row,
                     const TrainConfig& cfg, const GoldSyntax* gold,
                     std::vector<PhraseWithContext>& out) {
    SyntacticContexts ctx = model.syntax.build_contexts(acts, model.cfg.structure_layer, n);
    Tensor d;
    PhraseSegmentation seg;
    if (gold) {
        auto [dvals, gseg] = inject_gold(*gold, n, cfg.lambda_sup);
        d = Tensor::from(std::move(dvals), {n, 1});
        seg = std::move(gseg);
    } else {
        d = model.syntax.distances(ctx.word_ctx);
        seg = segment_phrases(SyntaxHead::distance_values(d), cfg.lambda_unsup);
    }
    for (PhraseEmbedding& pe : model.syntax.phrase_embed(seg, d, ctx.word_ctx)) {
        PhraseWithContext pc;
        pc.ctx_row = slice_rows(ctx.phrasal_ctx, pe.span.start - 1, pe.span.start);
        pc.phrase = std::move(pe);
        pc.sentence = row;
        out.push_back(std::move(pc));
    }
}

}  // namespace

TrainReport pretrain(Model& model, const BatchedCorpus& data, const Vocab& vocab,
                     const std::vector<GoldSyntax>* gold, const TrainConfig& cfg,
                     std::ostream* log, const std::string& ckpt_path) {
    cfg.validate();
    if (cfg.mode == TrainMode::Supervised && gold == nullptr)
        throw ContractError("supervised pre-training requires gold syntax");
    Adam opt(model.named_params(), cfg.lr, cfg.weight_decay);
    TrainReport rep;
    log_header(log);
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 mask_rng(substream_seed(cfg.seed, 1, epoch));
        std::mt19937_64 neg_rng(substream_seed(cfg.seed, 2, epoch));
        for (const TokenBatch& batch : data.batches) {
            ++step;
            MaskingPlan plan = mask_batch(batch, vocab, mask_rng);
            std::vector<MaskedPrediction> preds;
            std::vector<PhraseWithContext> phrases;
            for (int r = 0; r < batch.rows(); ++r) {
                const SentenceMask& sm = plan.sentences[r];
                const int n = batch.lengths[r];
                const GoldSyntax* g = nullptr;
                if (cfg.mode == TrainMode::Supervised) {
                    const int src = batch.sentence_index[r];
                    if (src >= static_cast<int>(gold->size()))
                        throw AlignmentError("no gold syntax for sentence " +
                                             std::to_string(src + 1));
                    g = &(*gold)[src];
                    if (static_cast<int>(g->tokens.size()) != n)
                        throw AlignmentError("gold syntax length mismatch at sentence " +
                                             std::to_string(src + 1));
                }
                LayerActivations acts = model.encoder.encode(sm.input_ids);
                MaskedPrediction mp;
                mp.logits = model.encoder.mlm_logits(acts.layer_out.back());
                mp.positions = sm.positions;
                mp.targets = sm.targets;
                preds.push_back(std::move(mp));
                collect_phrases(model, acts, n, r, cfg, g, phrases);
            }
            Tensor l_w = mlm_loss(preds);
            Tensor l_g = Tensor::scalar(0.0);
            Tensor l_neg = Tensor::scalar(0.0);
            try {
                StructureLossResult sl = structure_loss(phrases, 5, neg_rng);
                l_g = sl.l_g;
                l_neg = sl.l_neg;
            } catch (const SamplingError&) {
                ++rep.structure_skipped;
            }
            Tensor total = pretrain_loss(l_w, l_g, cfg.gamma_pre);
            opt.zero_grad();
            backward(total);
            opt.step();
            const double ppl = std::exp(l_w.value());
            log_row(log, step, l_w.value(), l_g.value(), l_neg.value(), 0.0, total.value(), ppl);
            rep.final_total = total.value();
            rep.final_ppl = ppl;
        }
        if (!ckpt_path.empty()) save_checkpoint(ckpt_path, model, cfg, vocab);
    }
    rep.steps = step;
    rep.epochs = cfg.epochs;
    return rep;
}

TrainReport finetune(Model& model, const BatchedCorpus& data, const std::vector<int>& labels,
                     const Vocab& vocab, const TrainConfig& cfg, std::ostream* log,
                     const std::string& ckpt_path, bool frozen) {
    cfg.validate();
    if (cfg.mode == TrainMode::Supervised)
        throw ModeError("gold structure injection is disabled during fine-tuning");
    if (model.n_labels <= 0) throw ContractError("fine-tuning requires a classification head");
    Adam opt(model.named_params(), cfg.lr, cfg.weight_decay);
    TrainReport rep;
    log_header(log);
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 neg_rng(substream_seed(cfg.seed, 2, epoch));
        for (const TokenBatch& batch : data.batches) {
            ++step;
            std::vector<PhraseWithContext> phrases;
            Tensor task_sum = Tensor::scalar(0.0);
            for (int r = 0; r < batch.rows(); ++r) {
                const int n = batch.lengths[r];
                const int src = batch.sentence_index[r];
                if (src >= static_cast<int>(labels.size()))
                    throw AlignmentError("no label for sentence " + std::to_string(src + 1));
                const int label = labels[src];
                if (label < 0 || label >= model.n_labels)
                    throw DataError("label " + std::to_string(label) + " outside [0, " +
                                    std::to_string(model.n_labels) + ")");
                std::vector<int> ids(batch.ids[r].begin(), batch.ids[r].begin() + n);
                LayerActivations acts = model.encoder.encode(ids);
                Tensor pooled = matmul(Tensor::full({1, n}, 1.0 / n), acts.layer_out.back());
                Tensor logits = add(matmul(pooled, model.cls_weight), model.cls_bias);
                task_sum = add(task_sum, cross_entropy(logits, label));
                collect_phrases(model, acts, n, r, cfg, nullptr, phrases);
            }
            Tensor l_task = scale(task_sum, 1.0 / batch.rows());
            Tensor l_g = Tensor::scalar(0.0);
            Tensor l_neg = Tensor::scalar(0.0);
            try {
                StructureLossResult sl = structure_loss(phrases, 5, neg_rng);
                l_g = sl.l_g;
                l_neg = sl.l_neg;
            } catch (const SamplingError&) {
                ++rep.structure_skipped;
            }
            Tensor total = finetune_loss(l_task, l_g, cfg.gamma_fine);
            if (!frozen) {
                opt.zero_grad();
                backward(total);
                opt.step();
            }
            log_row(log, step, 0.0, l_g.value(), l_neg.value(), l_task.value(), total.value(),
                    0.0);
            rep.final_total = total.value();
        }
        if (!frozen && !ckpt_path.empty()) save_checkpoint(ckpt_path, model, cfg, vocab);
    }
    rep.steps = step;
    rep.epochs = cfg.epochs;
    return rep;
}

double classify_accuracy(const Model& model, const BatchedCorpus& data,
                         const std::vector<int>& labels) {
    if (model.n_labels <= 0) throw ContractError("model has no classification head");
    int correct = 0, total = 0;
    for (const TokenBatch& batch : data.batches) {
        for (int r = 0; r < batch.rows(); ++r) {
            const int n = batch.lengths[r];
            const int src = batch.sentence_index[r];
            if (src >= static_cast<int>(labels.size()))
                throw AlignmentError("no label for sentence " + std::to_string(src + 1));
            std::vector<int> ids(batch.ids[r].begin(), batch.ids[r].begin() + n);
            LayerActivations acts = model.encoder.encode(ids);
            Tensor pooled = matmul(Tensor::full({1, n}, 1.0 / n), acts.layer_out.back());
            Tensor logits = add(matmul(pooled, model.cls_weight), model.cls_bias);
            int best = 0;
            for (int c = 1; c < model.n_labels; ++c)
                if (logits.at({0, c}) > logits.at({0, best})) best = c;
            correct += (best == labels[src]) ? 1 : 0;
            ++total;
        }
    }
    if (total == 0) throw ContractError("no sentences to classify");
    return static_cast<double>(correct) / total;
}

}  // namespace satl
