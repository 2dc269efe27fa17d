#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "satl/error.hpp"
#include "satl/train.hpp"

namespace satl {

// Payloads are raw IEEE doubles in file order; the writer commits to the
// little-endian layout directly.
static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'A', 'T', 'L'};
constexpr std::uint16_t kVersion = 1;

using nlohmann::json;

json encoder_json(const EncoderConfig& c) {
    return json{{"vocab_size", c.vocab_size}, {"n_layers", c.n_layers},
                {"n_heads", c.n_heads},       {"d_model", c.d_model},
                {"d_ff", c.d_ff},             {"max_len", c.max_len},
                {"structure_layer", c.structure_layer}};
}

json train_json(const TrainConfig& c) {
    return json{{"lr", c.lr},
                {"weight_decay", c.weight_decay},
                {"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"seed", c.seed},
                {"gamma_pre", c.gamma_pre},
                {"gamma_fine", c.gamma_fine},
                {"lambda_unsup", c.lambda_unsup},
                {"lambda_sup", c.lambda_sup},
                {"mode", train_mode_name(c.mode)}};
}

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const TrainConfig& train,
                     const Vocab& vocab) {
    const auto params = model.named_params();
    json header;
    header["encoder"] = encoder_json(model.cfg);
    header["train"] = train_json(train);
    header["n_labels"] = model.n_labels;
    json manifest = json::array();
    for (const auto& [name, t] : params)
        manifest.push_back(json{{"name", name}, {"shape", t.shape()}});
    header["params"] = manifest;
    header["vocab"] = vocab.tokens();
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint32_t>(hs.size()));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : params) {
        const std::vector<double>& d = t.data();
        out.write(reinterpret_cast<const char*>(d.data()),
                  static_cast<std::streamsize>(d.size() * sizeof(double)));
    }
    if (!out) throw DataError("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("not a checkpoint file: bad magic");
    std::uint16_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    if (!in || version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    std::uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    if (!in) throw FormatError("truncated checkpoint header length");
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    if (!in) throw FormatError("truncated checkpoint header");

    json header = json::parse(hs, nullptr, false);
    if (header.is_discarded()) throw FormatError("corrupted checkpoint header");

    EncoderConfig ec;
    TrainConfig tc;
    int n_labels = 0;
    std::vector<std::string> vocab_tokens;
    json manifest;
    try {
        const json& e = header.at("encoder");
        ec.vocab_size = e.at("vocab_size").get<int>();
        ec.n_layers = e.at("n_layers").get<int>();
        ec.n_heads = e.at("n_heads").get<int>();
        ec.d_model = e.at("d_model").get<int>();
        ec.d_ff = e.at("d_ff").get<int>();
        ec.max_len = e.at("max_len").get<int>();
        ec.structure_layer = e.at("structure_layer").get<int>();
        const json& t = header.at("train");
        tc.lr = t.at("lr").get<double>();
        tc.weight_decay = t.at("weight_decay").get<double>();
        tc.batch_size = t.at("batch_size").get<int>();
        tc.epochs = t.at("epochs").get<int>();
        tc.seed = t.at("seed").get<std::uint64_t>();
        tc.gamma_pre = t.at("gamma_pre").get<double>();
        tc.gamma_fine = t.at("gamma_fine").get<double>();
        tc.lambda_unsup = t.at("lambda_unsup").get<double>();
        tc.lambda_sup = t.at("lambda_sup").get<double>();
        tc.mode = train_mode_from(t.at("mode").get<std::string>());
        n_labels = header.at("n_labels").get<int>();
        vocab_tokens = header.at("vocab").get<std::vector<std::string>>();
        manifest = header.at("params");
        if (!manifest.is_array()) throw FormatError("parameter manifest is not an array");
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed checkpoint header: ") + e.what());
    }
    ec.validate();
    tc.validate();
    if (static_cast<int>(vocab_tokens.size()) != ec.vocab_size)
        throw IntegrityError("vocabulary size disagrees with encoder config");

    std::mt19937_64 scratch(0);
    Model model(ec, scratch);
    if (n_labels > 0) model.add_classifier(n_labels, scratch);
    const auto params = model.named_params();
    if (manifest.size() != params.size())
        throw IntegrityError("parameter manifest lists " + std::to_string(manifest.size()) +
                             " entries, model has " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::string name;
        std::vector<int> shape;
        try {
            name = manifest[i].at("name").get<std::string>();
            shape = manifest[i].at("shape").get<std::vector<int>>();
        } catch (const json::exception& e) {
            throw FormatError(std::string("malformed parameter manifest: ") + e.what());
        }
        if (name != params[i].first)
            throw IntegrityError("parameter order mismatch: expected " + params[i].first +
                                 ", header has " + name);
        if (shape != params[i].second.shape())
            throw IntegrityError("shape mismatch for " + name);
    }
    for (const auto& [name, t] : params) {
        std::vector<double>& d = Tensor(t).mutable_data();
        in.read(reinterpret_cast<char*>(d.data()),
                static_cast<std::streamsize>(d.size() * sizeof(double)));
        if (!in) throw FormatError("truncated payload at " + name);
    }
    char extra;
    if (in.read(&extra, 1)) throw FormatError("trailing bytes after payload");

    Vocab vocab = Vocab::from_tokens(std::move(vocab_tokens));
    return LoadedCheckpoint{std::move(model), tc, std::move(vocab)};
}

}  // namespace satl
