// Command-line front end: corpus synthesis, pre-training, fine-tuning,
// phrase induction, evaluation, and the attention/dependency probe. All
// randomness flows from --seed (or the seed stored in a checkpoint), so
// identical invocations over identical files produce identical bytes.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "satl/data.hpp"
#include "satl/error.hpp"
#include "satl/metrics.hpp"
#include "satl/syntax.hpp"
#include "satl/train.hpp"
#include "satl/treebank.hpp"

namespace {

using namespace satl;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Shared override state collected from flags; entries left unset defer to
// the config file, which in turn defers to built-in defaults.
struct Options {
    std::string config, ckpt, in, out, trees, deps, mode;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<double> lambda, gamma_pre, gamma_fine;
    std::optional<int> layer;
    bool directed = false;
    int n = 2000;
};

// Encoder keys recognised in config files and --set overrides; everything
// else must be a training key.
bool apply_encoder_entry(EncoderConfig& enc, const std::string& key, const std::string& value) {
    int* slot = nullptr;
    if (key == "n_layers") slot = &enc.n_layers;
    else if (key == "n_heads") slot = &enc.n_heads;
    else if (key == "d_model") slot = &enc.d_model;
    else if (key == "d_ff") slot = &enc.d_ff;
    else if (key == "max_len") slot = &enc.max_len;
    else if (key == "structure_layer") slot = &enc.structure_layer;
    if (!slot) return false;
    try {
        std::size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        *slot = v;
    } catch (const std::exception&) {
        throw ConfigError("bad value for " + key + ": " + value);
    }
    return true;
}

void apply_entry(TrainConfig& train, EncoderConfig& enc, const std::string& key,
                 const std::string& value) {
    if (!apply_encoder_entry(enc, key, value)) apply_config_entry(train, key, value);
}

std::string trimmed(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// `key = value` lines with '#' comments, accepting both training and
// encoder keys (the training-only parser rejects the latter).
void read_full_config(const std::string& path, TrainConfig& train, EncoderConfig& enc) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file " + path);
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trimmed(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key = value, got: " + line);
        apply_entry(train, enc, trimmed(line.substr(0, eq)), trimmed(line.substr(eq + 1)));
    }
}

void apply_set_overrides(const Options& opt, TrainConfig& train, EncoderConfig& enc) {
    for (const std::string& kv : opt.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + kv);
        apply_entry(train, enc, trimmed(kv.substr(0, eq)), trimmed(kv.substr(eq + 1)));
    }
}

// Dedicated flags win over --set, which wins over the config file.
void apply_flag_overrides(const Options& opt, TrainConfig& train, EncoderConfig& enc) {
    apply_set_overrides(opt, train, enc);
    if (!opt.mode.empty()) train.mode = train_mode_from(opt.mode);
    if (opt.seed) train.seed = *opt.seed;
    if (opt.gamma_pre) train.gamma_pre = *opt.gamma_pre;
    if (opt.gamma_fine) train.gamma_fine = *opt.gamma_fine;
    if (opt.lambda) {
        if (train.mode == TrainMode::Supervised) train.lambda_sup = *opt.lambda;
        else train.lambda_unsup = *opt.lambda;
    }
    if (opt.layer) enc.structure_layer = *opt.layer;
}

std::vector<int> encode_clipped(const std::vector<std::string>& sentence, const Vocab& vocab,
                                int max_len) {
    std::vector<int> ids;
    for (const std::string& tok : sentence) ids.push_back(vocab.encode(tok));
    if (static_cast<int>(ids.size()) > max_len) ids.resize(max_len);
    return ids;
}

// Gold records from whichever annotation files were given; tokens are
// checked against the corpus either way.
std::vector<GoldSyntax> load_gold(const std::string& trees, const std::string& deps,
                                  const std::vector<std::vector<std::string>>& corpus) {
    std::vector<GoldSyntax> gold;
    if (!trees.empty() && !deps.empty()) {
        gold = load_treebank(trees, deps);
    } else if (!trees.empty()) {
        for (ConstituencyTree& t : read_trees_file(trees)) {
            GoldSyntax g;
            g.tokens = t.tokens;
            g.tree = std::move(t);
            gold.push_back(std::move(g));
        }
    } else {
        for (DependencyGraph& d : read_conllx_file(deps)) {
            GoldSyntax g;
            g.tokens = d.tokens;
            g.deps = std::move(d);
            gold.push_back(std::move(g));
        }
    }
    validate_alignment(corpus, gold);
    return gold;
}

struct CheckpointRun {
    LoadedCheckpoint loaded;
    Corpus corpus;
};

CheckpointRun open_run(const Options& opt) {
    CheckpointRun run{load_checkpoint(opt.ckpt), read_corpus(opt.in)};
    return run;
}

std::ofstream open_out(const std::string& path) {
    if (const auto parent = std::filesystem::path(path).parent_path(); !parent.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(parent, ec);
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    return out;
}

// --- subcommands ---

int run_synth(const Options& opt) {
    namespace fs = std::filesystem;
    std::string prefix = opt.out;
    if (!prefix.empty() && prefix.back() == '/') {
        fs::create_directories(prefix);
        prefix += "synth";
    } else if (fs::is_directory(prefix)) {
        prefix += "/synth";
    } else if (const fs::path parent = fs::path(prefix).parent_path(); !parent.empty()) {
        fs::create_directories(parent);
    }
    const SynthCorpus corpus = synth_corpus(opt.n, opt.seed.value_or(42));
    write_synth_corpus(corpus, prefix);
    std::cout << "wrote " << corpus.sentences.size() << " sentences to " << prefix
              << ".{txt,trees,conllx}\n";
    return 0;
}

int run_pretrain(const Options& opt) {
    TrainConfig cfg;
    EncoderConfig enc;
    if (!opt.config.empty()) read_full_config(opt.config, cfg, enc);
    apply_flag_overrides(opt, cfg, enc);
    cfg.validate();

    const Corpus corpus = read_corpus(opt.in);
    if (corpus.sentences.empty()) throw DataError("training corpus is empty");
    const Vocab vocab = Vocab::build(corpus.sentences);
    enc.vocab_size = vocab.size();
    enc.validate();

    std::vector<GoldSyntax> gold;
    const GoldSyntax* gold_ptr = nullptr;
    std::vector<GoldSyntax>* gold_vec = nullptr;
    (void)gold_ptr;
    if (cfg.mode == TrainMode::Supervised) {
        if (opt.trees.empty() || opt.deps.empty())
            throw DataError("supervised pre-training needs --trees and --deps");
        gold = load_gold(opt.trees, opt.deps, corpus.sentences);
        gold_vec = &gold;
    }

    const BatchedCorpus data =
        encode_and_batch(corpus.sentences, vocab, cfg.batch_size, enc.max_len);
    std::mt19937_64 rng(cfg.seed);
    Model model(enc, rng);
    std::ofstream log = open_out(opt.out + ".log.csv");
    const TrainReport rep = pretrain(model, data, vocab, gold_vec, cfg, &log, opt.out);
    std::cout << "steps = " << rep.steps << "\nfinal_total = " << fmt(rep.final_total)
              << "\nfinal_ppl = " << fmt(rep.final_ppl)
              << "\nstructure_skipped = " << rep.structure_skipped << "\n";
    return 0;
}

// The classification target is derived from the gold trees: does the
// sentence contain a prepositional phrase constituent.
std::vector<int> pp_labels(const std::vector<ConstituencyTree>& trees) {
    std::vector<int> labels;
    labels.reserve(trees.size());
    for (const ConstituencyTree& t : trees) {
        int has = 0;
        for (const LabeledSpan& s : all_constituent_spans(t))
            if (s.label == "PP") has = 1;
        labels.push_back(has);
    }
    return labels;
}

int run_finetune(const Options& opt) {
    CheckpointRun run = open_run(opt);
    TrainConfig cfg = run.loaded.train;
    EncoderConfig enc = run.loaded.model.cfg;  // fixed by the checkpoint
    if (!opt.config.empty()) read_full_config(opt.config, cfg, enc);
    apply_flag_overrides(opt, cfg, enc);
    cfg.mode = TrainMode::Unsupervised;  // fine-tuning never injects gold
    cfg.validate();

    if (opt.trees.empty()) throw DataError("fine-tuning derives labels from --trees");
    std::vector<ConstituencyTree> trees = read_trees_file(opt.trees);
    if (trees.size() != run.corpus.sentences.size())
        throw AlignmentError("corpus has " + std::to_string(run.corpus.sentences.size()) +
                             " sentences but tree file has " + std::to_string(trees.size()));
    const std::vector<int> labels = pp_labels(trees);

    Model& model = run.loaded.model;
    const BatchedCorpus data = encode_and_batch(run.corpus.sentences, run.loaded.vocab,
                                                cfg.batch_size, model.cfg.max_len);
    if (model.n_labels == 0) {
        std::mt19937_64 rng(substream_seed(cfg.seed, 4, 0));
        model.add_classifier(2, rng);
    }
    std::ofstream log = open_out(opt.out + ".log.csv");
    const TrainReport rep =
        finetune(model, data, labels, run.loaded.vocab, cfg, &log, opt.out);
    const double acc = classify_accuracy(model, data, labels);
    std::cout << "steps = " << rep.steps << "\nfinal_total = " << fmt(rep.final_total)
              << "\naccuracy = " << fmt(acc) << "\n";
    return 0;
}

int run_induce(const Options& opt) {
    CheckpointRun run = open_run(opt);
    const Model& model = run.loaded.model;
    const double lambda = opt.lambda.value_or(run.loaded.train.lambda_unsup);

    std::ostream* os = &std::cout;
    std::ofstream file;
    if (!opt.out.empty()) {
        file = open_out(opt.out);
        os = &file;
    }
    for (const std::vector<std::string>& sent : run.corpus.sentences) {
        std::vector<int> ids = encode_clipped(sent, run.loaded.vocab, model.cfg.max_len);
        if (ids.empty()) continue;
        const int n = static_cast<int>(ids.size());
        LayerActivations acts = model.encoder.encode(ids);
        SyntacticContexts ctx = model.syntax.build_contexts(acts, model.cfg.structure_layer, n);
        const std::vector<double> d =
            SyntaxHead::distance_values(model.syntax.distances(ctx.word_ctx));
        const PhraseSegmentation seg = segment_phrases(d, lambda);
        std::vector<std::string> shown(sent.begin(), sent.begin() + n);
        *os << format_induction_line(shown, d, seg.spans) << "\n";
    }
    return 0;
}

int run_eval(const Options& opt) {
    CheckpointRun run = open_run(opt);
    std::vector<GoldSyntax> gold;
    const bool has_gold = !opt.trees.empty() || !opt.deps.empty();
    if (has_gold) gold = load_gold(opt.trees, opt.deps, run.corpus.sentences);

    EvalOptions eopt;
    eopt.seed = opt.seed.value_or(0);
    eopt.lambda = opt.lambda.value_or(run.loaded.train.lambda_unsup);
    eopt.directed = opt.directed;
    const EvalReport rep = evaluate_model(run.loaded.model, run.corpus.sentences,
                                          run.loaded.vocab, has_gold ? &gold : nullptr, eopt);
    if (rep.diff.degenerate)
        std::cerr << "warning: dispersion is constant across the corpus; "
                     "normalized values set to 0\n";
    const std::string csv = eval_report_csv(rep);
    if (opt.out.empty()) {
        std::cout << csv;
    } else {
        open_out(opt.out) << csv;
        std::cout << eval_report_summary(rep);
    }
    return 0;
}

int run_probe_dep(const Options& opt) {
    CheckpointRun run = open_run(opt);
    const std::vector<GoldSyntax> gold = load_gold("", opt.deps, run.corpus.sentences);
    const DepAlignmentResult r = dependency_alignment(run.loaded.model, run.corpus.sentences,
                                                      run.loaded.vocab, gold, opt.directed);
    std::ostream* os = &std::cout;
    std::ofstream file;
    if (!opt.out.empty()) {
        file = open_out(opt.out);
        os = &file;
    }
    *os << "layer,head,alignment\n";
    for (std::size_t l = 0; l < r.score.size(); ++l) {
        double sum = 0.0;
        for (std::size_t h = 0; h < r.score[l].size(); ++h) {
            *os << l << "," << h << "," << fmt(r.score[l][h]) << "\n";
            sum += r.score[l][h];
        }
        *os << l << ",mean," << fmt(sum / static_cast<double>(r.score[l].size())) << "\n";
    }
    if (r.skipped > 0) std::cerr << "warning: skipped " << r.skipped << " sentences\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Structure-aware transformer language model: training, phrase "
        "induction, and evaluation.\nFixed initialisation: layer-mixing "
        "weights start at 0.35/0.40/0.25; optimizer weight decay defaults "
        "to 0.01."};
    app.require_subcommand(1);
    Options opt;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", opt.seed, "random seed controlling all stochastic choices");
        sub->add_option("--set", opt.sets,
                        "override any config key, e.g. --set lr=1e-5 or --set d_model=64")
            ->type_name("KEY=VALUE");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate an aligned synthetic corpus");
    synth->add_option("--n", opt.n, "number of sentences")->capture_default_str();
    synth->add_option("--out", opt.out, "output prefix or directory")->required();
    add_common(synth);

    CLI::App* pre = app.add_subcommand("pretrain", "multi-task masked pre-training");
    pre->add_option("--config", opt.config, "key = value config file");
    pre->add_option("--in", opt.in, "training corpus, one sentence per line")->required();
    pre->add_option("--out", opt.out, "checkpoint path; the step log goes to <out>.log.csv")
        ->required();
    pre->add_option("--mode", opt.mode, "unsupervised or supervised structure induction")
        ->check(CLI::IsMember({"unsupervised", "supervised"}));
    pre->add_option("--lambda", opt.lambda,
                    "segmentation threshold (default 0.5 unsupervised, 0.7 supervised)");
    pre->add_option("--gamma-pre", opt.gamma_pre, "structure loss weight (default 0.5)");
    pre->add_option("--gamma-fine", opt.gamma_fine,
                    "structure loss weight for later fine-tuning (default 0.23)");
    pre->add_option("--layer", opt.layer, "encoder layer feeding the structure head");
    pre->add_option("--trees", opt.trees, "gold constituency file (supervised mode)");
    pre->add_option("--deps", opt.deps, "gold dependency file (supervised mode)");
    add_common(pre);

    CLI::App* fine = app.add_subcommand("finetune", "classification fine-tuning");
    fine->add_option("--ckpt", opt.ckpt, "pre-trained checkpoint")->required();
    fine->add_option("--config", opt.config, "key = value config file");
    fine->add_option("--in", opt.in, "task corpus, one sentence per line")->required();
    fine->add_option("--out", opt.out, "checkpoint path; the step log goes to <out>.log.csv")
        ->required();
    fine->add_option("--trees", opt.trees,
                     "gold constituency file; the binary label is the presence "
                     "of a prepositional phrase")
        ->required();
    fine->add_option("--lambda", opt.lambda, "segmentation threshold (default 0.5)");
    fine->add_option("--gamma-fine", opt.gamma_fine, "structure loss weight (default 0.23)");
    add_common(fine);

    CLI::App* ind = app.add_subcommand("induce", "dump distances and induced phrase spans");
    ind->add_option("--ckpt", opt.ckpt, "model checkpoint")->required();
    ind->add_option("--in", opt.in, "corpus to segment")->required();
    ind->add_option("--out", opt.out, "output file (default: standard output)");
    ind->add_option("--lambda", opt.lambda,
                    "segmentation threshold (default: the checkpoint's, 0.5)");
    add_common(ind);

    CLI::App* ev = app.add_subcommand("eval", "full evaluation report");
    ev->add_option("--ckpt", opt.ckpt, "model checkpoint")->required();
    ev->add_option("--in", opt.in, "evaluation corpus")->required();
    ev->add_option("--trees", opt.trees, "gold constituency file");
    ev->add_option("--deps", opt.deps, "gold dependency file");
    ev->add_option("--out", opt.out, "CSV report file (default: standard output)");
    ev->add_option("--lambda", opt.lambda,
                   "segmentation threshold (default: the checkpoint's, 0.5)");
    ev->add_flag("--directed", opt.directed,
                 "count only dependent-to-head attention in the alignment");
    add_common(ev);

    CLI::App* probe = app.add_subcommand("probe-dep",
                                         "attention/dependency alignment per layer and head");
    probe->add_option("--ckpt", opt.ckpt, "model checkpoint")->required();
    probe->add_option("--in", opt.in, "corpus to probe")->required();
    probe->add_option("--deps", opt.deps, "gold dependency file")->required();
    probe->add_option("--out", opt.out, "CSV file (default: standard output)");
    probe->add_flag("--directed", opt.directed,
                    "count only dependent-to-head attention");
    add_common(probe);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return run_synth(opt);
        if (pre->parsed()) return run_pretrain(opt);
        if (fine->parsed()) return run_finetune(opt);
        if (ind->parsed()) return run_induce(opt);
        if (ev->parsed()) return run_eval(opt);
        if (probe->parsed()) return run_probe_dep(opt);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
