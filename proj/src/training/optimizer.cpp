#include <cmath>
#include <numbers>

#include "algebraformer/errors.hpp"
#include "algebraformer/training.hpp"

namespace algebraformer::training {

void TrainConfig::validate() const {
    if (batch_size == 0) {
        throw DataError("TrainConfig: batch_size must be positive");
    }
    if (!(lr_min >= 0.0) || !(lr_min <= lr_max)) {
        throw DataError("TrainConfig: need 0 <= lr_min <= lr_max");
    }
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw DataError("TrainConfig: betas must lie in (0, 1)");
    }
    if (!(eps > 0.0) || !(weight_decay >= 0.0) || !(fine_tune_lr >= 0.0)) {
        throw DataError("TrainConfig: eps must be positive, weight decay and fine-tune lr nonnegative");
    }
    if (grad_clip && !(*grad_clip > 0.0)) {
        throw DataError("TrainConfig: grad_clip must be positive when set");
    }
    if (!(train_noise >= 0.0)) {
        throw DataError("TrainConfig: train_noise must be nonnegative");
    }
}

AdamState::AdamState(const std::vector<Tensor>& params) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Tensor& p : params) {
        m.emplace_back(p.numel(), 0.0);
        v.emplace_back(p.numel(), 0.0);
    }
}

namespace {

double clip_scale(const std::vector<Tensor>& grads, const TrainConfig& config) {
    if (!config.grad_clip) {
        return 1.0;
    }
    double sq = 0.0;
    for (const Tensor& g : grads) {
        for (double x : g.data()) {
            sq += x * x;
        }
    }
    const double norm = std::sqrt(sq);
    return norm > *config.grad_clip ? *config.grad_clip / norm : 1.0;
}

void update_tensor(std::span<double> w, std::span<const double> g, std::vector<double>& m,
                   std::vector<double>& v, bool decay, double lr, double scale, double bc1, double bc2,
                   const TrainConfig& config) {
    if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size()) {
        throw ShapeMismatch("adamw_step: parameter, gradient and state sizes differ");
    }
    const double shrink = decay ? 1.0 - lr * config.weight_decay : 1.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] * scale;
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] = w[i] * shrink - lr * mhat / (std::sqrt(vhat) + config.eps);
    }
}

} // namespace

void adamw_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                const std::vector<bool>& decay_mask, AdamState& state, double lr,
                const TrainConfig& config) {
    if (grads.size() != params.size() || decay_mask.size() != params.size()) {
        throw ShapeMismatch("adamw_step: parameter and gradient lists differ in length");
    }
    if (state.m.empty()) {
        state = AdamState(params);
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    const double scale = clip_scale(grads, config);
    for (std::size_t i = 0; i < params.size(); ++i) {
        update_tensor(params[i].data(), grads[i].data(), state.m[i], state.v[i], decay_mask[i], lr, scale,
                      bc1, bc2, config);
    }
}

void adamw_step(ModelWeights& weights, const std::vector<Tensor>& grads, AdamState& state, double lr,
                const TrainConfig& config) {
    if (grads.size() != weights.size()) {
        throw ShapeMismatch("adamw_step: gradient count differs from weight count");
    }
    if (state.m.empty()) {
        for (std::size_t i = 0; i < weights.size(); ++i) {
            state.m.emplace_back(weights.tensor(i).numel(), 0.0);
            state.v.emplace_back(weights.tensor(i).numel(), 0.0);
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    const double scale = clip_scale(grads, config);
    for (std::size_t i = 0; i < weights.size(); ++i) {
        update_tensor(weights.tensor(i).data(), grads[i].data(), state.m[i], state.v[i],
                      model::decays(weights.name(i)), lr, scale, bc1, bc2, config);
    }
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min) {
    if (total_steps == 0) {
        return lr_max;
    }
    const double frac = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
    return lr_min + (lr_max - lr_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

} // namespace algebraformer::training
