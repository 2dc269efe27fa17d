#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "satl/data.hpp"
#include "satl/encoder.hpp"
#include "satl/syntax.hpp"
#include "satl/treebank.hpp"

namespace satl {

enum class TrainMode { Unsupervised, Supervised };

std::string train_mode_name(TrainMode mode);
TrainMode train_mode_from(const std::string& name);  // ConfigError on unknown

struct TrainConfig {
    double lr = 3e-5;          // grid: 8e-6, 1e-5, 2e-5, 3e-5
    double weight_decay = 0.01;
    int batch_size = 16;       // grid: 16, 24, 32
    int epochs = 5;
    std::uint64_t seed = 42;
    double gamma_pre = 0.5;
    double gamma_fine = 0.23;
    double lambda_unsup = 0.5;
    double lambda_sup = 0.7;
    TrainMode mode = TrainMode::Unsupervised;

    void validate() const;  // positive rates and sizes; ConfigError otherwise
};

// Flat `key = value` lines, '#' comments; unknown keys are rejected.
TrainConfig parse_train_config_text(const std::string& text);
TrainConfig read_train_config(const std::string& path);
// Applies one key/value pair onto cfg (shared by the file parser and
// command-line overrides). ConfigError on unknown key or bad value.
void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value);
std::string format_train_config(const TrainConfig& cfg);  // round-trips through the parser

// Encoder plus structure head plus an optional classification head, with a
// single flat parameter registry for optimization and checkpointing.
struct Model {
    EncoderConfig cfg;
    Encoder encoder;
    SyntaxHead syntax;
    int n_labels = 0;
    Tensor cls_weight;  // [d_model, n_labels] when n_labels > 0
    Tensor cls_bias;    // [1, n_labels]

    Model(const EncoderConfig& config, std::mt19937_64& rng);
    void add_classifier(int labels, std::mt19937_64& rng);
    std::vector<std::pair<std::string, Tensor>> named_params() const;
};

// Deterministic per-purpose RNG seeds. Masking draws from stream 1 and
// negative sampling from stream 2, so removing one consumer never shifts
// the other's sequence.
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t epoch);

struct SentenceMask {
    std::vector<int> input_ids;  // originals with replacements applied
    std::vector<int> positions;  // 0-based masked rows, ascending
    std::vector<int> targets;    // original ids at those rows
};

struct MaskingPlan {
    std::vector<SentenceMask> sentences;
};

// Masks round(15%) of each sentence (at least one token): 80% become the
// mask id, 10% a random non-reserved id, 10% keep their surface form.
MaskingPlan mask_batch(const TokenBatch& batch, const Vocab& vocab, std::mt19937_64& rng);

// AdamW: bias-corrected moments plus decoupled weight decay applied to every
// registered parameter. Rejects duplicate registrations; a non-finite
// gradient aborts the step naming the offending parameter.
class Adam {
public:
    Adam(std::vector<std::pair<std::string, Tensor>> params, double lr, double weight_decay);

    void zero_grad();
    void step();  // NumericError on non-finite gradient
    int steps_taken() const { return t_; }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, wd_;
    int t_ = 0;
};

struct TrainReport {
    int steps = 0;
    int epochs = 0;
    int structure_skipped = 0;  // batches whose phrase pool admitted no negatives
    double final_total = 0.0;
    double final_ppl = 0.0;
};

// Multi-task pre-training: masked-token prediction plus the weighted phrase
// structure objective. Supervised mode swaps induced distances and spans for
// gold-derived ones (gold aligned with the corpus by sentence index). Logs
// one CSV row per step when log is non-null; checkpoints after each epoch
// when ckpt_path is non-empty.
TrainReport pretrain(Model& model, const BatchedCorpus& data, const Vocab& vocab,
                     const std::vector<GoldSyntax>* gold, const TrainConfig& cfg,
                     std::ostream* log = nullptr, const std::string& ckpt_path = "");

// Classification fine-tuning: mean-pooled top layer through the linear head,
// task loss plus gamma_fine times the structure loss; segmentation is always
// the induced one (supervised mode here is a ModeError). frozen computes
// losses without updating any parameter.
TrainReport finetune(Model& model, const BatchedCorpus& data, const std::vector<int>& labels,
                     const Vocab& vocab, const TrainConfig& cfg, std::ostream* log = nullptr,
                     const std::string& ckpt_path = "", bool frozen = false);

// Fraction of sentences whose argmax class matches the label. Forward only.
double classify_accuracy(const Model& model, const BatchedCorpus& data,
                         const std::vector<int>& labels);

// Binary checkpoint: magic "SATL", version, JSON header (configs, parameter
// manifest, vocabulary), then raw little-endian doubles in manifest order.
void save_checkpoint(const std::string& path, const Model& model, const TrainConfig& train,
                     const Vocab& vocab);

struct LoadedCheckpoint {
    Model model;
    TrainConfig train;
    Vocab vocab;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace satl
