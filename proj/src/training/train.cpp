#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "algebraformer/binary_io.hpp"
#include "algebraformer/errors.hpp"
#include "algebraformer/linalg.hpp"
#include "algebraformer/rng.hpp"
#include "algebraformer/training.hpp"

namespace algebraformer::training {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kNoiseStream = 0x4e4f495345ULL;
constexpr std::uint64_t kInitStream = 0x494e4954ULL;

void check_compatible(const ModelConfig& cfg, const SupervisedSet& set, const char* what) {
    if (set.empty()) {
        return;
    }
    if (set.token_dim() != cfg.token_dim) {
        throw DatasetError(std::string(what) + ": token width " + std::to_string(set.token_dim()) +
                           " does not match the model's " + std::to_string(cfg.token_dim));
    }
    if (set.tokens() > cfg.max_tokens) {
        throw TooManyTokens(std::string(what) + ": " + std::to_string(set.tokens()) +
                            " tokens exceed max_tokens " + std::to_string(cfg.max_tokens));
    }
}

Tensor batch_tokens(const SupervisedSet& set, std::span<const std::size_t> idx, double noise,
                    std::uint64_t seed, std::size_t epoch) {
    std::vector<Tensor> items;
    items.reserve(idx.size());
    for (std::size_t i : idx) {
        if (noise > 0.0 && !set.A.empty()) {
            Rng rng(derive_seed(seed ^ kNoiseStream, epoch, i));
            const Vector bn = bvp::add_noise(set.b[i], noise, rng);
            items.push_back(model::encode_system(set.A[i], bn));
        } else {
            items.push_back(set.inputs[i]);
        }
    }
    return model::stack(items);
}

Tensor batch_targets(const SupervisedSet& set, std::span<const std::size_t> idx) {
    const std::size_t T = set.targets[idx.front()].size();
    std::vector<double> data;
    data.reserve(idx.size() * T);
    for (std::size_t i : idx) {
        data.insert(data.end(), set.targets[i].begin(), set.targets[i].end());
    }
    return Tensor({idx.size(), T}, std::move(data));
}

using LrFn = std::function<double(std::size_t step, std::size_t total)>;

TrainResult run(ModelWeights weights, const TrainConfig& config, const SupervisedSet& train_set,
                const SupervisedSet& test_set, const LrFn& lr_at, const EpochCallback& on_epoch) {
    config.validate();
    if (train_set.empty()) {
        throw DatasetError("train: empty training set");
    }
    check_compatible(weights.config(), train_set, "train");
    check_compatible(weights.config(), test_set, "test");
    if (train_set.tokens() != test_set.tokens() && !test_set.empty()) {
        throw DatasetError("train: training and test systems differ in dimension");
    }

    const std::size_t N = train_set.size();
    const std::size_t B = std::min(config.batch_size, N);
    const std::size_t steps_per_epoch = (N + B - 1) / B;
    const std::size_t total_steps = config.epochs * steps_per_epoch;

    TrainResult result;
    AdamState state;
    std::size_t step = 0;
    std::vector<std::size_t> order(N);
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(config.seed ^ kShuffleStream, epoch));
        for (std::size_t i = N; i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        double loss_sum = 0.0;
        double lr = 0.0;
        for (std::size_t start = 0; start < N; start += B) {
            const std::span<const std::size_t> idx(order.data() + start, std::min(B, N - start));
            ad::Tape tape;
            const auto params = model::bind_parameters(tape, weights, true);
            ad::Var tokens = tape.constant(batch_tokens(train_set, idx, config.train_noise, config.seed, epoch));
            ad::Var target = tape.constant(batch_targets(train_set, idx));
            ad::Var pred = model::forward(tape, weights, params, tokens);
            ad::Var loss = ad::mse_loss(pred, target);
            const double loss_value = loss.value().item();
            if (!std::isfinite(loss_value)) {
                throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch));
            }
            tape.backward(loss);
            std::vector<Tensor> grads;
            grads.reserve(params.size());
            for (const ad::Var& p : params) {
                grads.push_back(tape.grad(p.id()));
            }
            lr = lr_at(step, total_steps);
            adamw_step(weights, grads, state, lr, config);
            ++step;
            loss_sum += loss_value * static_cast<double>(idx.size());
        }
        EpochMetrics row;
        row.epoch = epoch;
        row.train_loss = loss_sum / static_cast<double>(N);
        if (!test_set.empty()) {
            const Evaluation ev = evaluate(weights, test_set);
            row.test_mse = ev.mse;
            row.test_rel_mse = ev.rel_mse;
        } else {
            row.test_mse = std::numeric_limits<double>::quiet_NaN();
            row.test_rel_mse = std::numeric_limits<double>::quiet_NaN();
        }
        row.lr = lr;
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.rows.push_back(row);
        if (on_epoch) {
            on_epoch(row);
        }
        if (config.checkpoint_every > 0 && !config.checkpoint_dir.empty() &&
            epoch % config.checkpoint_every == 0) {
            model::save_weights(config.checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".weights"), weights);
        }
    }
    if (!config.checkpoint_dir.empty()) {
        model::save_weights(config.checkpoint_dir / "final.weights", weights);
    }
    result.weights = std::move(weights);
    return result;
}

} // namespace

std::string MetricsLog::to_csv() const {
    std::ostringstream os;
    os << kHeader << '\n';
    for (const auto& r : rows) {
        os << r.epoch << ',' << io::format_double(r.train_loss) << ',' << io::format_double(r.test_mse) << ','
           << io::format_double(r.test_rel_mse) << ',' << io::format_double(r.lr) << ',' << r.seconds << '\n';
    }
    return os.str();
}

void MetricsLog::write_csv(const std::filesystem::path& path) const {
    io::write_file(path, to_csv());
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& config, const SupervisedSet& train_set,
                  const SupervisedSet& test_set, const EpochCallback& on_epoch) {
    ModelWeights weights = model::init_weights(model_config, derive_seed(config.seed ^ kInitStream, 0));
    return run(std::move(weights), config, train_set, test_set,
               [&](std::size_t step, std::size_t total) {
                   return cosine_lr(step, total, config.lr_max, config.lr_min);
               },
               on_epoch);
}

TrainResult fine_tune(const ModelWeights& pretrained, const TrainConfig& config, const SupervisedSet& train_set,
                      const SupervisedSet& test_set, const EpochCallback& on_epoch) {
    const double lr = config.fine_tune_lr;
    return run(pretrained, config, train_set, test_set, [lr](std::size_t, std::size_t) { return lr; },
               on_epoch);
}

double relative_mse(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) {
        throw ShapeMismatch("relative_mse: length mismatch");
    }
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        num += d * d;
        den += truth[i] * truth[i];
    }
    if (std::sqrt(den) < 1e-300) {
        throw DegenerateTruth("relative_mse: reference vector has zero norm");
    }
    return num / den;
}

std::vector<Vector> predict_all(const ModelWeights& weights, const SupervisedSet& set, std::size_t batch_size) {
    std::vector<Vector> out;
    out.reserve(set.size());
    for (std::size_t start = 0; start < set.size(); start += batch_size) {
        const std::size_t end = std::min(set.size(), start + batch_size);
        const Tensor tokens = model::stack(std::span<const Tensor>(set.inputs.data() + start, end - start));
        const Tensor pred = model::forward(weights, tokens);
        const std::size_t T = tokens.dim(1);
        for (std::size_t i = 0; i < end - start; ++i) {
            out.emplace_back(pred.storage().begin() + static_cast<std::ptrdiff_t>(i * T),
                             pred.storage().begin() + static_cast<std::ptrdiff_t>((i + 1) * T));
        }
    }
    return out;
}

namespace {

Evaluation score(const std::vector<Vector>& preds, const SupervisedSet& set) {
    Evaluation ev;
    std::vector<double> rel;
    rel.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < preds[i].size(); ++j) {
            const double d = preds[i][j] - set.targets[i][j];
            s += d * d;
        }
        ev.mse += s;
        rel.push_back(relative_mse(preds[i], set.targets[i]));
    }
    ev.mse /= static_cast<double>(std::max<std::size_t>(set.size(), 1));
    ev.rel_mse = rel.empty() ? 0.0 : bvp::median(std::move(rel));
    return ev;
}

} // namespace

Evaluation evaluate(const ModelWeights& weights, const SupervisedSet& set) {
    return score(predict_all(weights, set), set);
}

Evaluation mean_predictor_baseline(const SupervisedSet& train_set, const SupervisedSet& test_set) {
    if (train_set.empty()) {
        throw DatasetError("mean_predictor_baseline: empty training set");
    }
    Vector mean(train_set.targets.front().size(), 0.0);
    for (const Vector& t : train_set.targets) {
        for (std::size_t j = 0; j < mean.size(); ++j) {
            mean[j] += t[j];
        }
    }
    for (double& m : mean) {
        m /= static_cast<double>(train_set.size());
    }
    return score(std::vector<Vector>(test_set.size(), mean), test_set);
}

std::vector<NoiseRow> noise_benchmark(const ModelWeights& weights, const SupervisedSet& set,
                                      const std::vector<double>& levels, double rcond, std::uint64_t seed) {
    if (set.A.empty()) {
        throw DatasetError("noise_benchmark: set does not carry linear systems");
    }
    check_compatible(weights.config(), set, "noise_benchmark");
    std::vector<double> all_levels = levels;
    if (all_levels.empty() || all_levels.front() != 0.0) {
        all_levels.insert(all_levels.begin(), 0.0);
    }
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<NoiseRow> rows;
    for (std::size_t li = 0; li < all_levels.size(); ++li) {
        const double level = all_levels[li];
        if (!(level >= 0.0)) {
            throw DataError("noise_benchmark: noise levels must be nonnegative");
        }
        SupervisedSet noisy;
        noisy.targets = set.targets;
        std::vector<double> lu;
        std::vector<double> qr;
        std::vector<double> sv;
        for (std::size_t i = 0; i < set.size(); ++i) {
            Rng rng(derive_seed(seed ^ kNoiseStream, li, i));
            const Vector bn = bvp::add_noise(set.b[i], level, rng);
            noisy.inputs.push_back(model::encode_system(set.A[i], bn));
            auto attempt = [&](auto&& solve) {
                try {
                    return relative_mse(solve(), set.targets[i]);
                } catch (const NumericalError&) {
                    return inf;
                }
            };
            lu.push_back(attempt([&] { return linalg::lu_solve(set.A[i], bn); }));
            qr.push_back(attempt([&] { return linalg::qr_least_squares(set.A[i], bn); }));
            sv.push_back(attempt([&] { return linalg::svd_least_squares(set.A[i], bn, rcond); }));
        }
        NoiseRow row;
        row.level = level;
        row.model = score(predict_all(weights, noisy), noisy).rel_mse;
        row.lu = bvp::median(std::move(lu));
        row.qr = bvp::median(std::move(qr));
        row.svd = bvp::median(std::move(sv));
        rows.push_back(row);
    }
    return rows;
}

std::string noise_table_csv(const std::vector<NoiseRow>& rows) {
    std::ostringstream os;
    os << "level,model,lu,qr,svd\n";
    for (const auto& r : rows) {
        os << io::format_double(r.level) << ',' << io::format_double(r.model) << ',' << io::format_double(r.lu) << ','
           << io::format_double(r.qr) << ',' << io::format_double(r.svd) << '\n';
    }
    return os.str();
}

} // namespace algebraformer::training
