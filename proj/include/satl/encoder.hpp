#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "satl/tensor.hpp"

namespace satl {

struct EncoderConfig {
    int vocab_size = 0;
    int n_layers = 6;
    int n_heads = 4;
    int d_model = 64;
    int d_ff = 256;
    int max_len = 64;
    // The layer whose states feed the structure head; its neighbours
    // l-1 and l+1 must also be valid layer indices.
    int structure_layer = 3;

    void validate() const;  // throws ConfigError
    int d_head() const { return d_model / n_heads; }
};

struct LayerParams {
    Tensor wq, wk, wv, wo;
    Tensor ln1_gain, ln1_bias;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor ln2_gain, ln2_bias;
};

// Full forward trace of one sentence. layer_out[0] is the embedding sum,
// layer_out[l] the output of layer l. attn[l-1][h] is the row-stochastic
// attention matrix of head h in layer l.
struct LayerActivations {
    std::vector<Tensor> layer_out;
    std::vector<std::vector<Tensor>> attn;
};

// Token-level encoder over one sentence at a time. Each call builds a fresh
// graph over the shared parameter leaves, so per-sentence losses can be
// summed and swept with a single backward.
class Encoder {
  public:
    Encoder(const EncoderConfig& cfg, std::mt19937_64& rng);

    const EncoderConfig& config() const { return cfg_; }
    // Checkpoint order: embeddings, then layers front to back, then the
    // output bias. Construction consumes the generator in this order too.
    const std::vector<std::pair<std::string, Tensor>>& named_params() const { return named_; }

    // Token plus learned position embeddings, [n, d_model].
    Tensor embed(const std::vector<int>& ids) const;

    // Runs the full stack. Key columns at positions >= valid_len are masked
    // with a -1e9 additive term, which zeroes their attention exactly; rows
    // there still flow through but carry no information into valid rows.
    // valid_len < 0 means every position is valid.
    LayerActivations encode(const std::vector<int>& ids, int valid_len = -1) const;

    // Vocabulary logits tied to the token embedding, plus a bias: [n, vocab].
    Tensor mlm_logits(const Tensor& h) const;

    Tensor tok_embed, pos_embed, out_bias;
    std::vector<LayerParams> layers;

  private:
    EncoderConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> named_;
};

}  // namespace satl
