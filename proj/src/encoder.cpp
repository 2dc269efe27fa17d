#include "satl/encoder.hpp"

#include <cmath>

#include "satl/error.hpp"

namespace satl {

void EncoderConfig::validate() const {
    if (vocab_size < 4) throw ConfigError("vocab_size must cover the reserved ids");
    if (n_layers < 3) throw ConfigError("need at least 3 layers to host a structure layer");
    if (n_heads < 1 || d_model < 1 || d_ff < 1 || max_len < 1)
        throw ConfigError("encoder dimensions must be positive");
    if (d_model % n_heads != 0)
        throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    if (structure_layer <= 1 || structure_layer >= n_layers)
        throw ConfigError("structure_layer must lie strictly inside [2, n_layers-1]");
}

Encoder::Encoder(const EncoderConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.d_model;
    const double s = 0.02;

    tok_embed = Tensor::randn({cfg_.vocab_size, d}, s, rng, true);
    pos_embed = Tensor::randn({cfg_.max_len, d}, s, rng, true);
    named_.emplace_back("embed.tok", tok_embed);
    named_.emplace_back("embed.pos", pos_embed);

    layers.resize(cfg_.n_layers);
    for (int l = 0; l < cfg_.n_layers; ++l) {
        LayerParams& p = layers[l];
        p.wq = Tensor::randn({d, d}, s, rng, true);
        p.wk = Tensor::randn({d, d}, s, rng, true);
        p.wv = Tensor::randn({d, d}, s, rng, true);
        p.wo = Tensor::randn({d, d}, s, rng, true);
        p.ln1_gain = Tensor::full({d}, 1.0, true);
        p.ln1_bias = Tensor::zeros({d}, true);
        p.ffn_w1 = Tensor::randn({d, cfg_.d_ff}, s, rng, true);
        p.ffn_b1 = Tensor::zeros({cfg_.d_ff}, true);
        p.ffn_w2 = Tensor::randn({cfg_.d_ff, d}, s, rng, true);
        p.ffn_b2 = Tensor::zeros({d}, true);
        p.ln2_gain = Tensor::full({d}, 1.0, true);
        p.ln2_bias = Tensor::zeros({d}, true);
        const std::string base = "layer" + std::to_string(l) + ".";
        named_.emplace_back(base + "attn.wq", p.wq);
        named_.emplace_back(base + "attn.wk", p.wk);
        named_.emplace_back(base + "attn.wv", p.wv);
        named_.emplace_back(base + "attn.wo", p.wo);
        named_.emplace_back(base + "ln1.gain", p.ln1_gain);
        named_.emplace_back(base + "ln1.bias", p.ln1_bias);
        named_.emplace_back(base + "ffn.w1", p.ffn_w1);
        named_.emplace_back(base + "ffn.b1", p.ffn_b1);
        named_.emplace_back(base + "ffn.w2", p.ffn_w2);
        named_.emplace_back(base + "ffn.b2", p.ffn_b2);
        named_.emplace_back(base + "ln2.gain", p.ln2_gain);
        named_.emplace_back(base + "ln2.bias", p.ln2_bias);
    }

    out_bias = Tensor::zeros({cfg_.vocab_size}, true);
    named_.emplace_back("out.bias", out_bias);
}

Tensor Encoder::embed(const std::vector<int>& ids) const {
    const int n = static_cast<int>(ids.size());
    if (n == 0) throw ContractError("cannot embed an empty sentence");
    if (n > cfg_.max_len)
        throw TruncationError("sentence length " + std::to_string(n) + " exceeds max_len " +
                              std::to_string(cfg_.max_len));
    for (int id : ids)
        if (id < 0 || id >= cfg_.vocab_size)
            throw VocabError("token id " + std::to_string(id) + " outside vocabulary");
    std::vector<int> positions(n);
    for (int i = 0; i < n; ++i) positions[i] = i;
    return add(take_rows(tok_embed, ids), take_rows(pos_embed, positions));
}

LayerActivations Encoder::encode(const std::vector<int>& ids, int valid_len) const {
    const int n = static_cast<int>(ids.size());
    if (valid_len < 0) valid_len = n;
    if (valid_len == 0 || valid_len > n)
        throw ContractError("valid_len " + std::to_string(valid_len) + " out of range for " +
                            std::to_string(n) + " tokens");

    LayerActivations acts;
    Tensor h = embed(ids);
    acts.layer_out.push_back(h);

    Tensor mask;
    if (valid_len < n) {
        Tensor m = Tensor::zeros({n, n});
        auto& md = m.mutable_data();
        for (int i = 0; i < n; ++i)
            for (int j = valid_len; j < n; ++j) md[static_cast<std::size_t>(i) * n + j] = -1e9;
        mask = m;
    }

    const int dh = cfg_.d_head();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = 0; l < cfg_.n_layers; ++l) {
        const LayerParams& p = layers[l];
        Tensor q = matmul(h, p.wq);
        Tensor k = matmul(h, p.wk);
        Tensor v = matmul(h, p.wv);
        std::vector<Tensor> head_out, head_attn;
        for (int hd = 0; hd < cfg_.n_heads; ++hd) {
            Tensor qh = slice_cols(q, hd * dh, (hd + 1) * dh);
            Tensor kh = slice_cols(k, hd * dh, (hd + 1) * dh);
            Tensor vh = slice_cols(v, hd * dh, (hd + 1) * dh);
            Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
            if (mask.defined()) scores = add(scores, mask);
            Tensor a = softmax_lastdim(scores);
            head_attn.push_back(a);
            head_out.push_back(matmul(a, vh));
        }
        Tensor e = matmul(concat_cols(head_out), p.wo);
        Tensor f = add(matmul(relu(add(matmul(layer_norm(e, p.ln1_gain, p.ln1_bias), p.ffn_w1),
                                       p.ffn_b1)),
                              p.ffn_w2),
                       p.ffn_b2);
        h = layer_norm(add(f, e), p.ln2_gain, p.ln2_bias);
        acts.layer_out.push_back(h);
        acts.attn.push_back(std::move(head_attn));
    }
    return acts;
}

Tensor Encoder::mlm_logits(const Tensor& h) const {
    return add(matmul(h, transpose(tok_embed)), out_bias);
}

}  // namespace satl
