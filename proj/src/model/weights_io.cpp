#include <json.hpp>

#include "algebraformer/binary_io.hpp"
#include "algebraformer/errors.hpp"
#include "algebraformer/model.hpp"

namespace algebraformer::model {

using nlohmann::json;

namespace {

json config_to_json(const ModelConfig& c) {
    return json{
        {"preset", c.preset},
        {"n_layers", c.n_layers},
        {"d_model", c.d_model},
        {"n_heads", c.n_heads},
        {"mlp_ratio", c.mlp_ratio},
        {"token_dim", c.token_dim},
        {"out_dim_per_token", c.out_dim_per_token},
        {"max_tokens", c.max_tokens},
        {"init_std", c.init_std},
        {"ln_eps", c.ln_eps},
        {"causal", c.causal},
        {"positional", c.positional},
    };
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.preset = j.at("preset").get<std::string>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    c.token_dim = j.at("token_dim").get<std::size_t>();
    c.out_dim_per_token = j.at("out_dim_per_token").get<std::size_t>();
    c.max_tokens = j.at("max_tokens").get<std::size_t>();
    c.init_std = j.at("init_std").get<double>();
    c.ln_eps = j.at("ln_eps").get<double>();
    c.causal = j.at("causal").get<bool>();
    c.positional = j.at("positional").get<bool>();
    return c;
}

} // namespace

std::string encode_weights(const ModelWeights& weights) {
    json tensors = json::array();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const Tensor& t = weights.tensor(i);
        tensors.push_back({{"name", weights.name(i)}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.numel();
    }
    const json header{
        {"format", kWeightsFormat},
        {"config", config_to_json(weights.config())},
        {"tensors", tensors},
        {"parameter_count", weights.parameter_count()},
        {"metadata", weights.metadata()},
    };
    const std::string text = header.dump();
    io::ByteWriter w;
    w.u64(text.size());
    w.raw(text);
    for (std::size_t i = 0; i < weights.size(); ++i) {
        w.f64s(weights.tensor(i).data());
    }
    return std::move(w.bytes());
}

ModelWeights decode_weights(std::string_view bytes, const ModelConfig* expected) {
    io::ByteReader r(bytes);
    const std::uint64_t header_len = r.u64();
    if (header_len > r.remaining()) {
        throw FormatError("weights: header length exceeds file size");
    }
    json header;
    ModelConfig config;
    try {
        header = json::parse(r.take(header_len));
        if (header.at("format").get<std::string>() != kWeightsFormat) {
            throw FormatError("weights: unsupported format");
        }
        config = config_from_json(header.at("config"));
    } catch (const json::exception& e) {
        throw FormatError(std::string("weights header: ") + e.what());
    }
    if (expected != nullptr && !(config == *expected)) {
        throw FormatError("weights: stored config does not match the requested architecture");
    }
    try {
        config.validate();
    } catch (const DataError& e) {
        throw FormatError(std::string("weights: invalid config: ") + e.what());
    }
    ModelWeights weights(config);
    const json& tensors = header.at("tensors");
    if (!tensors.is_array() || tensors.size() != weights.size()) {
        throw FormatError("weights: tensor table does not match the config");
    }
    std::size_t offset = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const json& e = tensors[i];
        try {
            if (e.at("name").get<std::string>() != weights.name(i) ||
                e.at("shape").get<ad::Shape>() != weights.tensor(i).shape() ||
                e.at("offset").get<std::size_t>() != offset) {
                throw FormatError("weights: tensor entry " + std::to_string(i) + " is inconsistent");
            }
        } catch (const json::exception& ex) {
            throw FormatError(std::string("weights: tensor table: ") + ex.what());
        }
        offset += weights.tensor(i).numel();
    }
    if (r.remaining() != offset * sizeof(double)) {
        throw FormatError("weights: payload size does not match the tensor table");
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
        r.f64s(weights.tensor(i).data());
    }
    if (header.contains("metadata")) {
        weights.metadata() = header.at("metadata").get<std::map<std::string, std::string>>();
    }
    return weights;
}

void save_weights(const std::filesystem::path& path, const ModelWeights& weights) {
    io::write_file(path, encode_weights(weights));
}

ModelWeights load_weights(const std::filesystem::path& path, const ModelConfig* expected) {
    return decode_weights(io::read_file(path), expected);
}

} // namespace algebraformer::model
