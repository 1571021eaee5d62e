#include "algebraformer/model.hpp"

#include <cmath>

#include "algebraformer/errors.hpp"
#include "algebraformer/rng.hpp"

namespace algebraformer::model {

using ad::Shape;
using ad::Tape;
using ad::Var;

void ModelConfig::validate() const {
    if (n_layers == 0 || d_model == 0 || n_heads == 0 || mlp_ratio == 0) {
        throw DataError("ModelConfig: layer count, width, heads and MLP ratio must be positive");
    }
    if (d_model % n_heads != 0) {
        throw DataError("ModelConfig: d_model must be divisible by n_heads");
    }
    if (token_dim == 0 || max_tokens == 0) {
        throw DataError("ModelConfig: token_dim and max_tokens must be positive");
    }
    if (out_dim_per_token != 1) {
        throw DataError("ModelConfig: only one output per token is supported");
    }
    if (!(init_std > 0.0) || !(ln_eps > 0.0)) {
        throw DataError("ModelConfig: init_std and ln_eps must be positive");
    }
}

ModelConfig paper_preset(std::size_t token_dim, std::size_t max_tokens) {
    ModelConfig c;
    c.preset = "paper";
    c.n_layers = 12;
    c.d_model = 256;
    c.n_heads = 8;
    c.mlp_ratio = 4;
    c.token_dim = token_dim;
    c.max_tokens = max_tokens;
    return c;
}

ModelConfig desk_preset(std::size_t token_dim, std::size_t max_tokens) {
    ModelConfig c;
    c.preset = "desk";
    c.n_layers = 2;
    c.d_model = 64;
    c.n_heads = 4;
    c.mlp_ratio = 4;
    c.token_dim = token_dim;
    c.max_tokens = max_tokens;
    return c;
}

ModelConfig preset_by_name(const std::string& name, std::size_t token_dim, std::size_t max_tokens) {
    if (name == "paper") {
        return paper_preset(token_dim, max_tokens);
    }
    if (name == "desk") {
        return desk_preset(token_dim, max_tokens);
    }
    throw DataError("unknown model preset: " + name);
}

ModelWeights::ModelWeights(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::size_t d = config_.d_model;
    const std::size_t hidden = d * config_.mlp_ratio;
    add("encoder.weight", {config_.token_dim, d});
    add("encoder.bias", {d});
    if (config_.positional) {
        add("pos_embedding", {config_.max_tokens, d});
    }
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        add(p + "norm1.gain", {d});
        add(p + "norm1.bias", {d});
        add(p + "attn.wq", {d, d});
        add(p + "attn.bq", {d});
        add(p + "attn.wk", {d, d});
        add(p + "attn.bk", {d});
        add(p + "attn.wv", {d, d});
        add(p + "attn.bv", {d});
        add(p + "attn.wo", {d, d});
        add(p + "attn.bo", {d});
        add(p + "norm2.gain", {d});
        add(p + "norm2.bias", {d});
        add(p + "mlp.w_in", {d, hidden});
        add(p + "mlp.b_in", {hidden});
        add(p + "mlp.w_out", {hidden, d});
        add(p + "mlp.b_out", {d});
    }
    add("final_norm.gain", {d});
    add("final_norm.bias", {d});
    add("decoder.weight", {d, config_.out_dim_per_token});
    add("decoder.bias", {config_.out_dim_per_token});
}

void ModelWeights::add(std::string name, Shape shape) {
    index_[name] = tensors_.size();
    names_.push_back(std::move(name));
    tensors_.emplace_back(std::move(shape), 0.0);
}

std::size_t ModelWeights::index_of(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) {
        throw DataError("ModelWeights: no tensor named " + name);
    }
    return it->second;
}

Tensor& ModelWeights::at(const std::string& name) { return tensors_[index_of(name)]; }
const Tensor& ModelWeights::at(const std::string& name) const { return tensors_[index_of(name)]; }

std::size_t ModelWeights::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) {
        n += t.numel();
    }
    return n;
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace

bool decays(const std::string& name) {
    if (name == "pos_embedding" || name.find("norm") != std::string::npos) {
        return false;
    }
    return ends_with(name, "weight") || ends_with(name, ".wq") || ends_with(name, ".wk") ||
           ends_with(name, ".wv") || ends_with(name, ".wo") || ends_with(name, ".w_in") ||
           ends_with(name, ".w_out");
}

ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed) {
    ModelWeights w(config);
    Rng rng(seed);
    const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config.n_layers));
    for (std::size_t i = 0; i < w.size(); ++i) {
        const std::string& name = w.name(i);
        Tensor& t = w.tensor(i);
        if (ends_with(name, ".gain")) {
            std::fill(t.storage().begin(), t.storage().end(), 1.0);
        } else if (decays(name) || name == "pos_embedding") {
            const bool residual_out = ends_with(name, ".wo") || ends_with(name, ".w_out");
            const double std_dev = config.init_std * (residual_out ? residual_scale : 1.0);
            for (double& v : t.data()) {
                v = std_dev * rng.normal();
            }
        }
    }
    return w;
}

Tensor encode_system(const DenseMatrix& A, std::span<const double> b, std::size_t max_tokens) {
    if (!A.square()) {
        throw ShapeMismatch("encode_system: matrix is not square");
    }
    const std::size_t n = A.rows();
    if (b.size() != n) {
        throw ShapeMismatch("encode_system: right-hand side length mismatch");
    }
    if (n > max_tokens) {
        throw TooManyTokens("encode_system: " + std::to_string(n) + " tokens exceed the limit of " +
                            std::to_string(max_tokens));
    }
    Tensor tokens({n, n + 1}, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t r = 0; r < n; ++r) {
            tokens[i * (n + 1) + r] = A(r, i);
        }
        tokens[i * (n + 1) + n] = b[i];
    }
    return tokens;
}

std::pair<DenseMatrix, Vector> decode_system(const Tensor& tokens) {
    if (tokens.rank() != 2 || tokens.dim(1) != tokens.dim(0) + 1) {
        throw ShapeMismatch("decode_system: expected [n, n+1] tokens");
    }
    const std::size_t n = tokens.dim(0);
    DenseMatrix A(n, n);
    Vector b(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t r = 0; r < n; ++r) {
            A(r, i) = tokens[i * (n + 1) + r];
        }
        b[i] = tokens[i * (n + 1) + n];
    }
    return {std::move(A), std::move(b)};
}

Tensor encode_newton_state(std::span<const double> Atb, std::span<const double> x) {
    if (Atb.size() != x.size()) {
        throw ShapeMismatch("encode_newton_state: A^T b and x differ in length");
    }
    const std::size_t n = x.size();
    Tensor tokens({n, 2}, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        tokens[2 * i] = Atb[i];
        tokens[2 * i + 1] = x[i];
    }
    return tokens;
}

std::pair<Vector, Vector> decode_newton_state(const Tensor& tokens) {
    if (tokens.rank() != 2 || tokens.dim(1) != 2) {
        throw ShapeMismatch("decode_newton_state: expected [n, 2] tokens");
    }
    const std::size_t n = tokens.dim(0);
    Vector Atb(n);
    Vector x(n);
    for (std::size_t i = 0; i < n; ++i) {
        Atb[i] = tokens[2 * i];
        x[i] = tokens[2 * i + 1];
    }
    return {std::move(Atb), std::move(x)};
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) {
        throw ShapeMismatch("stack: no tensors");
    }
    const Shape& inner = items.front().shape();
    Shape shape{items.size()};
    shape.insert(shape.end(), inner.begin(), inner.end());
    std::vector<double> data;
    data.reserve(items.size() * items.front().numel());
    for (const Tensor& t : items) {
        if (t.shape() != inner) {
            throw ShapeMismatch("stack: tensors differ in shape");
        }
        data.insert(data.end(), t.storage().begin(), t.storage().end());
    }
    return Tensor(std::move(shape), std::move(data));
}

std::vector<Var> bind_parameters(Tape& tape, const ModelWeights& weights, bool requires_grad) {
    std::vector<Var> params;
    params.reserve(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        params.push_back(tape.leaf(weights.tensor(i), requires_grad));
    }
    return params;
}

namespace {

Var linear(Var x, Var w, Var b) { return ad::add(ad::matmul(x, w), b); }

} // namespace

Var forward(Tape& tape, const ModelWeights& weights, std::span<const Var> params, Var tokens,
            const ForwardOptions& options) {
    const ModelConfig& cfg = weights.config();
    if (&tokens.tape() != &tape) {
        throw Error("forward: tokens are not on the given tape");
    }
    if (params.size() != weights.size()) {
        throw ShapeMismatch("forward: parameter handle count differs from weights");
    }
    const Shape& ts = tokens.shape();
    if (ts.size() != 3 || ts[2] != cfg.token_dim) {
        throw ShapeMismatch("forward: tokens must be [B, T, " + std::to_string(cfg.token_dim) +
                            "], got " + ad::shape_string(ts));
    }
    const std::size_t B = ts[0];
    const std::size_t T = ts[1];
    if (T > cfg.max_tokens) {
        throw TooManyTokens("forward: " + std::to_string(T) + " tokens exceed max_tokens " +
                            std::to_string(cfg.max_tokens));
    }
    auto P = [&](const std::string& name) { return params[weights.index_of(name)]; };

    Var h = linear(tokens, P("encoder.weight"), P("encoder.bias"));
    if (cfg.positional) {
        h = ad::add(h, ad::slice_rows(P("pos_embedding"), T));
    }
    const std::size_t dh = cfg.d_model / cfg.n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        Var a = ad::layer_norm(h, P(p + "norm1.gain"), P(p + "norm1.bias"), cfg.ln_eps);
        Var q = ad::split_heads(linear(a, P(p + "attn.wq"), P(p + "attn.bq")), cfg.n_heads);
        Var k = ad::split_heads(linear(a, P(p + "attn.wk"), P(p + "attn.bk")), cfg.n_heads);
        Var v = ad::split_heads(linear(a, P(p + "attn.wv"), P(p + "attn.bv")), cfg.n_heads);
        Var scores = ad::mul_scalar(ad::matmul(q, ad::transpose(k)), scale);
        if (cfg.causal) {
            scores = ad::causal_mask(scores);
        }
        Var att = ad::softmax_last_axis(scores);
        if (options.attention != nullptr) {
            options.attention->push_back(att.value());
        }
        Var ctx = ad::merge_heads(ad::matmul(att, v));
        h = ad::add(h, linear(ctx, P(p + "attn.wo"), P(p + "attn.bo")));

        Var m = ad::layer_norm(h, P(p + "norm2.gain"), P(p + "norm2.bias"), cfg.ln_eps);
        m = ad::gelu(linear(m, P(p + "mlp.w_in"), P(p + "mlp.b_in")));
        h = ad::add(h, linear(m, P(p + "mlp.w_out"), P(p + "mlp.b_out")));
    }
    h = ad::layer_norm(h, P("final_norm.gain"), P("final_norm.bias"), cfg.ln_eps);
    Var out = linear(h, P("decoder.weight"), P("decoder.bias"));
    return ad::reshape(out, {B, T});
}

Tensor forward(const ModelWeights& weights, const Tensor& tokens, const ForwardOptions& options) {
    const bool single = tokens.rank() == 2;
    Tape tape;
    const auto params = bind_parameters(tape, weights, false);
    Tensor batched = tokens;
    if (single) {
        Shape s{1};
        s.insert(s.end(), tokens.shape().begin(), tokens.shape().end());
        batched = Tensor(std::move(s), tokens.storage());
    }
    Var out = forward(tape, weights, params, tape.constant(std::move(batched)), options);
    if (single) {
        return Tensor({tokens.dim(0)}, out.value().storage());
    }
    return out.value();
}

Vector predict(const ModelWeights& weights, const Tensor& tokens) {
    return forward(weights, tokens).storage();
}

} // namespace algebraformer::model
