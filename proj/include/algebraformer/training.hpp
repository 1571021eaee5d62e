#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "algebraformer/bvp.hpp"
#include "algebraformer/model.hpp"

namespace algebraformer::training {

using ad::Tensor;
using linalg::Vector;
using model::ModelConfig;
using model::ModelWeights;

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 128;
    double lr_max = 1e-4;
    double lr_min = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::optional<double> grad_clip;   ///< global gradient-norm clip; off when empty
    std::uint64_t seed = 0;
    bool fine_tune = false;
    double fine_tune_lr = 5e-5;
    std::size_t checkpoint_every = 0;  ///< 0 disables periodic checkpoints
    std::filesystem::path checkpoint_dir;
    double train_noise = 0.0;          ///< relative b-noise applied to training inputs each epoch

    /// Throws DataError on lr_min > lr_max, betas outside (0, 1), zero batch size.
    void validate() const;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double test_mse = 0.0;
    double test_rel_mse = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

/// One row per completed epoch. test_mse is the mean of sum_i (pred_i - x_i)^2
/// over test systems; test_rel_mse is the median of ||pred - x||^2 / ||x||^2.
struct MetricsLog {
    std::vector<EpochMetrics> rows;

    static constexpr const char* kHeader = "epoch,train_loss,test_mse,test_rel_mse,lr,seconds";
    std::string to_csv() const;
    void write_csv(const std::filesystem::path& path) const;
};

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;

    AdamState() = default;
    explicit AdamState(const std::vector<Tensor>& params);
};

/// Decoupled-decay AdamW on a flat list of tensors. decay_mask[i] selects
/// which tensors receive weight decay.
void adamw_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                const std::vector<bool>& decay_mask, AdamState& state, double lr,
                const TrainConfig& config);
/// Same, on model weights; decay follows model::decays.
void adamw_step(ModelWeights& weights, const std::vector<Tensor>& grads, AdamState& state, double lr,
                const TrainConfig& config);

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min);

/// Model-ready pairs: inputs [T, F] token tensors, targets of length T.
/// For linear systems the raw (A, b) are kept so noise can be re-applied.
struct SupervisedSet {
    std::vector<Tensor> inputs;
    std::vector<Vector> targets;
    std::vector<linalg::DenseMatrix> A;  ///< empty for non-system data
    std::vector<Vector> b;

    std::size_t size() const { return inputs.size(); }
    bool empty() const { return inputs.empty(); }
    std::size_t tokens() const { return inputs.empty() ? 0 : inputs.front().dim(0); }
    std::size_t token_dim() const { return inputs.empty() ? 0 : inputs.front().dim(1); }
};

SupervisedSet make_supervised(std::span<const bvp::LinearSystemSample> samples);
SupervisedSet make_supervised(const bvp::Dataset& dataset);

/// Rows [begin, end) of a set.
SupervisedSet subset(const SupervisedSet& set, std::size_t begin, std::size_t end);

/// Leading (1 - test_fraction) share for training, the rest for testing.
std::pair<SupervisedSet, SupervisedSet> split(const SupervisedSet& set, double test_fraction);

struct TrainResult {
    ModelWeights weights;
    MetricsLog log;
};

/// Optional per-epoch observer (epoch metrics after they are appended).
using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Fresh initialization from config.seed, cosine schedule over every step.
TrainResult train(const ModelConfig& model_config, const TrainConfig& config, const SupervisedSet& train_set,
                  const SupervisedSet& test_set, const EpochCallback& on_epoch = {});

/// Constant learning rate config.fine_tune_lr starting from `pretrained`.
TrainResult fine_tune(const ModelWeights& pretrained, const TrainConfig& config,
                      const SupervisedSet& train_set, const SupervisedSet& test_set,
                      const EpochCallback& on_epoch = {});

/// ||pred - truth||^2 / ||truth||^2.
double relative_mse(std::span<const double> pred, std::span<const double> truth);

struct Evaluation {
    double mse = 0.0;       ///< mean over systems of the summed squared error
    double rel_mse = 0.0;   ///< median relative MSE
};

/// Batched inference over a set.
std::vector<Vector> predict_all(const ModelWeights& weights, const SupervisedSet& set,
                                std::size_t batch_size = 256);
Evaluation evaluate(const ModelWeights& weights, const SupervisedSet& set);

/// Per-coordinate mean of the training targets, scored on the test set.
Evaluation mean_predictor_baseline(const SupervisedSet& train_set, const SupervisedSet& test_set);

struct NoiseRow {
    double level = 0.0;
    double model = 0.0;
    double lu = 0.0;
    double qr = 0.0;
    double svd = 0.0;
};

/// Median relative MSE of the model and the three classical solvers on
/// b-perturbed systems, scored against the clean labels. Solver failures
/// (singular pivots) count as relative MSE = +inf.
std::vector<NoiseRow> noise_benchmark(const ModelWeights& weights, const SupervisedSet& set,
                                      const std::vector<double>& levels, double rcond,
                                      std::uint64_t seed);
std::string noise_table_csv(const std::vector<NoiseRow>& rows);

} // namespace algebraformer::training
