#include <chrono>
#include <cmath>

#include "algebraformer/errors.hpp"
#include "algebraformer/newton.hpp"

namespace algebraformer::newton {

void LpProblem::validate() const {
    if (!(p > 1.0)) {
        throw DataError("LpProblem: p must exceed 1");
    }
    if (n() == 0 || m() < n()) {
        throw DataError("LpProblem: need m >= n >= 1");
    }
    if (b.size() != m()) {
        throw ShapeMismatch("LpProblem: b has length " + std::to_string(b.size()) + ", expected " +
                            std::to_string(m()));
    }
}

namespace {

void check_x(const LpProblem& prob, std::span<const double> x) {
    if (x.size() != prob.n()) {
        throw ShapeMismatch("x has length " + std::to_string(x.size()) + ", expected " +
                            std::to_string(prob.n()));
    }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

} // namespace

Vector residual(const LpProblem& prob, std::span<const double> x) {
    check_x(prob, x);
    Vector r = linalg::matvec(prob.A, x);
    for (std::size_t i = 0; i < r.size(); ++i) {
        r[i] -= prob.b[i];
    }
    return r;
}

double objective(const LpProblem& prob, std::span<const double> x) {
    double f = 0.0;
    for (double ri : residual(prob, x)) {
        f += std::pow(std::abs(ri), prob.p);
    }
    return f;
}

double lp_norm(const LpProblem& prob, std::span<const double> x) {
    return std::pow(objective(prob, x), 1.0 / prob.p);
}

Vector gradient(const LpProblem& prob, std::span<const double> x) {
    Vector w = residual(prob, x);
    for (double& ri : w) {
        ri = prob.p * std::pow(std::abs(ri), prob.p - 1.0) * sign(ri);
    }
    return linalg::matvec_transposed(prob.A, w);
}

DenseMatrix hessian(const LpProblem& prob, std::span<const double> x) {
    const Vector r = residual(prob, x);
    const std::size_t m = prob.m();
    const std::size_t n = prob.n();
    const double c = prob.p * (prob.p - 1.0);
    DenseMatrix H(n, n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double w = c * std::pow(std::max(std::abs(r[i]), kResidualFloor), prob.p - 2.0);
        const auto a = prob.A.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            const double wa = w * a[j];
            for (std::size_t k = j; k < n; ++k) {
                H(j, k) += wa * a[k];
            }
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < j; ++k) {
            H(j, k) = H(k, j);
        }
    }
    return H;
}

DenseMatrix sample_matrix(std::size_t m, std::size_t n, Rng& rng) {
    DenseMatrix A(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            A(i, j) = rng.uniform();
        }
    }
    const double fro = linalg::frobenius_norm(A);
    if (!(fro > 0.0)) {
        throw NumericalError("sample_matrix: zero matrix drawn");
    }
    for (double& v : A.data()) {
        v /= fro;
    }
    return A;
}

Vector sample_rhs(std::size_t m, Rng& rng) {
    Vector b(m);
    for (double& v : b) {
        v = rng.uniform();
    }
    const double nb = linalg::norm2(b);
    if (!(nb > 0.0)) {
        throw NumericalError("sample_rhs: zero vector drawn");
    }
    for (double& v : b) {
        v /= nb;
    }
    return b;
}

LpProblem sample_problem(std::size_t m, std::size_t n, double p, std::uint64_t seed) {
    if (n == 0 || m < n) {
        throw DataError("sample_problem: need m >= n >= 1");
    }
    Rng rng(seed);
    LpProblem prob;
    prob.A = sample_matrix(m, n, rng);
    prob.b = sample_rhs(m, rng);
    prob.p = p;
    prob.validate();
    return prob;
}

Vector newton_direction(const DenseMatrix& H, std::span<const double> g) {
    try {
        return linalg::lu_solve(H, g);
    } catch (const SingularMatrix&) {
    }
    for (double lambda = 1e-10; lambda < 1e10; lambda *= 10.0) {
        DenseMatrix damped = H;
        for (std::size_t i = 0; i < damped.rows(); ++i) {
            damped(i, i) += lambda;
        }
        try {
            return linalg::lu_solve(damped, g);
        } catch (const SingularMatrix&) {
        }
    }
    throw SingularMatrix("newton_direction: Hessian stays singular under damping");
}

std::string_view to_string(StopCriterion c) {
    return c == StopCriterion::GradientNorm ? "gradient-norm" : "objective-decrement";
}

std::string_view to_string(StopReason r) {
    switch (r) {
    case StopReason::GradientNorm: return "GradientNorm";
    case StopReason::ObjectiveDecrement: return "ObjectiveDecrement";
    case StopReason::Stationary: return "Stationary";
    case StopReason::MaxIterExceeded: return "MaxIterExceeded";
    }
    return "unknown";
}

StopCriterion parse_stop_criterion(std::string_view name) {
    if (name == "gradient-norm" || name == "GradientNorm") {
        return StopCriterion::GradientNorm;
    }
    if (name == "objective-decrement" || name == "ObjectiveDecrement") {
        return StopCriterion::ObjectiveDecrement;
    }
    throw DataError("unknown stop criterion: " + std::string(name));
}

DirectionProvider DirectionProvider::exact() {
    return {Kind::ExactSolve, "exact", [](const NewtonState& s) {
                return newton_direction(hessian(s.problem, s.x), s.g);
            }};
}

DirectionProvider DirectionProvider::learned(std::shared_ptr<const model::ModelWeights> weights) {
    if (!weights) {
        throw DataError("DirectionProvider::learned: no weights");
    }
    if (weights->config().token_dim != 2) {
        throw ShapeMismatch("DirectionProvider::learned: model expects token width " +
                            std::to_string(weights->config().token_dim) + ", Newton states have 2");
    }
    return {Kind::LearnedModel, "learned", [w = std::move(weights)](const NewtonState& s) {
                return model::predict(*w, model::encode_newton_state(s.Atb, s.x));
            }};
}

DirectionProvider DirectionProvider::custom(std::string name, DirectionFn fn) {
    return {Kind::Custom, std::move(name), std::move(fn)};
}

Vector DirectionProvider::operator()(const NewtonState& state) const {
    Vector d = fn_(state);
    if (d.size() != state.x.size()) {
        throw ShapeMismatch("direction provider '" + name_ + "' returned length " + std::to_string(d.size()) +
                            ", expected " + std::to_string(state.x.size()));
    }
    return d;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

} // namespace

AcceleratedResult accelerated_newton(const LpProblem& prob, std::span<const double> x0,
                                     const DirectionProvider& provider, const NewtonOptions& options) {
    prob.validate();
    check_x(prob, x0);
    if (!(options.tol > 0.0)) {
        throw DataError("newton: tol must be positive");
    }
    const auto start = Clock::now();
    const Vector Atb = linalg::matvec_transposed(prob.A, prob.b);

    AcceleratedResult out;
    NewtonTrajectory& tr = out.trajectory;
    Vector x(x0.begin(), x0.end());
    tr.iterates.push_back(x);
    tr.objectives.push_back(objective(prob, x));
    double g0 = 0.0;
    bool stopped = false;
    for (std::size_t k = 0; k < options.max_iter; ++k) {
        const auto t_iter = Clock::now();
        const Vector g = gradient(prob, x);
        const double gn = linalg::norm2(g);
        tr.gradient_norms.push_back(gn);
        if (k == 0) {
            g0 = gn;
        }
        if (options.stop == StopCriterion::GradientNorm && gn < options.tol) {
            tr.stop_reason = StopReason::GradientNorm;
            stopped = true;
            break;
        }
        if (gn <= 1e-12 * g0) {
            tr.stop_reason = StopReason::Stationary;
            stopped = true;
            break;
        }
        const auto t_dir = Clock::now();
        const Vector d = provider({prob, Atb, x, g});
        if (k == 0) {
            out.timing.first_direction_seconds = seconds_since(t_dir);
        }

        double step = 1.0;
        Vector x_new(x.size());
        auto take = [&](double t) {
            for (std::size_t i = 0; i < x.size(); ++i) {
                x_new[i] = x[i] - t * d[i];
            }
        };
        take(step);
        double f_new = objective(prob, x_new);
        if (options.line_search) {
            const double slope = linalg::dot(g, d);
            const double f_old = tr.objectives.back();
            while (f_new > f_old - 1e-4 * step * slope && step > 1e-10) {
                step *= 0.5;
                take(step);
                f_new = objective(prob, x_new);
            }
        }
        const double decrement = std::abs(lp_norm(prob, x) - std::pow(f_new, 1.0 / prob.p));
        // A step that leaves x unchanged is no progress, not convergence.
        const bool moved = x_new != x;
        tr.directions.push_back(d);
        tr.iterates.push_back(x_new);
        tr.objectives.push_back(f_new);
        x = std::move(x_new);
        out.timing.iteration_seconds.push_back(seconds_since(t_iter));
        if (options.stop == StopCriterion::ObjectiveDecrement && moved && decrement < options.tol) {
            tr.gradient_norms.push_back(linalg::norm2(gradient(prob, x)));
            tr.stop_reason = StopReason::ObjectiveDecrement;
            stopped = true;
            break;
        }
    }
    if (!stopped) {
        tr.gradient_norms.push_back(linalg::norm2(gradient(prob, x)));
        tr.stop_reason = StopReason::MaxIterExceeded;
    }
    tr.converged = tr.stop_reason != StopReason::MaxIterExceeded && std::isfinite(tr.objectives.back());
    out.timing.total_seconds = seconds_since(start);
    return out;
}

NewtonTrajectory newton_solve(const LpProblem& prob, std::span<const double> x0, const NewtonOptions& options) {
    return accelerated_newton(prob, x0, DirectionProvider::exact(), options).trajectory;
}

} // namespace algebraformer::newton
