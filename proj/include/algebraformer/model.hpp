#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "algebraformer/autodiff.hpp"
#include "algebraformer/linalg.hpp"

namespace algebraformer::model {

using ad::Tensor;
using linalg::DenseMatrix;
using linalg::Vector;

struct ModelConfig {
    std::string preset = "custom";
    std::size_t n_layers = 2;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t mlp_ratio = 4;
    std::size_t token_dim = 17;        ///< n+1 for column patches, 2 for Newton states
    std::size_t out_dim_per_token = 1;
    std::size_t max_tokens = 16;
    double init_std = 0.02;
    double ln_eps = 1e-5;
    bool causal = false;               ///< mask attention to earlier tokens only
    bool positional = true;            ///< learned absolute positional embeddings

    /// Throws DataError when d_model is not divisible by n_heads and similar.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// 12 blocks, width 256, 8 heads, MLP ratio 4.
ModelConfig paper_preset(std::size_t token_dim, std::size_t max_tokens);
/// 2 blocks, width 64, 4 heads, MLP ratio 4.
ModelConfig desk_preset(std::size_t token_dim, std::size_t max_tokens);
ModelConfig preset_by_name(const std::string& name, std::size_t token_dim, std::size_t max_tokens);

/// All learnable tensors, in a fixed order derived from the config.
class ModelWeights {
public:
    ModelWeights() = default;
    /// Zero-filled tensors with the shapes the config implies.
    explicit ModelWeights(ModelConfig config);

    const ModelConfig& config() const { return config_; }

    std::size_t size() const { return tensors_.size(); }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    Tensor& tensor(std::size_t i) { return tensors_.at(i); }
    const Tensor& tensor(std::size_t i) const { return tensors_.at(i); }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    std::size_t index_of(const std::string& name) const;

    std::size_t parameter_count() const;

    /// Free-form provenance (e.g. the problem a Newton model was trained on).
    std::map<std::string, std::string>& metadata() { return metadata_; }
    const std::map<std::string, std::string>& metadata() const { return metadata_; }

    friend bool operator==(const ModelWeights& a, const ModelWeights& b) {
        return a.config_ == b.config_ && a.names_ == b.names_ && a.tensors_ == b.tensors_;
    }

private:
    void add(std::string name, ad::Shape shape);

    ModelConfig config_;
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, std::string> metadata_;
};

/// Weight decay applies to matrices only: never to norm parameters, biases,
/// or positional embeddings.
bool decays(const std::string& parameter_name);

/// Gaussian init with std init_std; residual output projections scaled by
/// 1/sqrt(2 n_layers); norm gains 1, biases 0.
ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed);

/// n tokens of width n+1: token i = [column i of A ; b_i].
Tensor encode_system(const DenseMatrix& A, std::span<const double> b,
                     std::size_t max_tokens = std::numeric_limits<std::size_t>::max());
/// Inverse of encode_system.
std::pair<DenseMatrix, Vector> decode_system(const Tensor& tokens);

/// n tokens of width 2: token i = [(A^T b)_i, x_i].
Tensor encode_newton_state(std::span<const double> Atb, std::span<const double> x);
std::pair<Vector, Vector> decode_newton_state(const Tensor& tokens);

/// Stacks equally shaped [T, F] token tensors into [B, T, F].
Tensor stack(std::span<const Tensor> items);

struct ForwardOptions {
    /// When set, receives one [B, H, T, T] attention tensor per layer.
    std::vector<Tensor>* attention = nullptr;
};

/// Leaf handles of the weights on a tape, in ModelWeights order.
std::vector<ad::Var> bind_parameters(ad::Tape& tape, const ModelWeights& weights, bool requires_grad);

/// Records the forward pass. tokens is [B, T, F]; returns [B, T].
ad::Var forward(ad::Tape& tape, const ModelWeights& weights, std::span<const ad::Var> params,
                ad::Var tokens, const ForwardOptions& options = {});

/// Inference on [T, F] (one system) or [B, T, F]; returns [T] or [B, T].
Tensor forward(const ModelWeights& weights, const Tensor& tokens, const ForwardOptions& options = {});
/// Convenience for one system: one scalar per token.
Vector predict(const ModelWeights& weights, const Tensor& tokens);

inline constexpr const char* kWeightsFormat = "algebraformer-weights-v1";

/// Layout: 8-byte little-endian header length, JSON header (config, tensor
/// names, shapes, offsets), then every tensor as little-endian doubles.
void save_weights(const std::filesystem::path& path, const ModelWeights& weights);
std::string encode_weights(const ModelWeights& weights);
/// Throws FormatError on a corrupt file, or when `expected` is given and
/// the stored config differs from it.
ModelWeights load_weights(const std::filesystem::path& path, const ModelConfig* expected = nullptr);
ModelWeights decode_weights(std::string_view bytes, const ModelConfig* expected = nullptr);

} // namespace algebraformer::model
