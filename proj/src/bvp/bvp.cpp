#include "algebraformer/bvp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <thread>

#include "algebraformer/errors.hpp"

namespace algebraformer::bvp {

std::string_view to_string(EquationKind kind) {
    switch (kind) {
    case EquationKind::Diffusion: return "diffusion";
    case EquationKind::ReactionDiffusion: return "reaction";
    case EquationKind::AdvectionDiffusion: return "advection";
    }
    return "unknown";
}

EquationKind parse_equation_kind(std::string_view name) {
    if (name == "diffusion" || name == "Diffusion") {
        return EquationKind::Diffusion;
    }
    if (name == "reaction" || name == "ReactionDiffusion" || name == "reaction-diffusion") {
        return EquationKind::ReactionDiffusion;
    }
    if (name == "advection" || name == "AdvectionDiffusion" || name == "advection-diffusion") {
        return EquationKind::AdvectionDiffusion;
    }
    throw DataError("unknown equation kind: " + std::string(name));
}

Discretization make_discretization(std::size_t N, double a, double b) {
    const cheb::ChebyshevGrid grid = cheb::gauss_lobatto_nodes(N);
    const cheb::DiffMatrix scaled = cheb::scale_to_interval(cheb::diff_matrix(grid), a, b);
    const Vector phys = scaled.grid.physical_nodes();

    Discretization disc;
    disc.N = N;
    disc.a = a;
    disc.b = b;
    const std::size_t n = N + 1;
    disc.nodes.resize(n);
    disc.D = DenseMatrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        disc.nodes[i] = phys[N - i];
        for (std::size_t j = 0; j < n; ++j) {
            disc.D(i, j) = scaled.D(N - i, N - j);
        }
    }
    return disc;
}

Vector evaluate_K(double alpha, double omega, std::span<const double> nodes) {
    Vector K(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        K[i] = 1.0 + alpha * std::cos(2.0 * std::numbers::pi * omega * nodes[i]);
    }
    return K;
}

KSample sample_K(Rng& rng, const Discretization& disc) {
    KSample s;
    s.alpha = rng.uniform(0.25, 0.75);
    s.omega = rng.uniform(0.01, 0.75);
    s.values = evaluate_K(s.alpha, s.omega, disc.nodes);
    return s;
}

Vector random_field(Rng& rng, std::span<const double> nodes, double length) {
    double a_k[kFourierModes];
    double b_k[kFourierModes];
    for (int k = 0; k < kFourierModes; ++k) {
        const double scale = 1.0 / static_cast<double>(k + 1);
        a_k[k] = rng.uniform(-1.0, 1.0) * scale;
        b_k[k] = rng.uniform(-1.0, 1.0) * scale;
    }
    Vector r(nodes.size(), 0.0);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        double v = 0.0;
        for (int k = 0; k < kFourierModes; ++k) {
            const double phase = 2.0 * std::numbers::pi * static_cast<double>(k + 1) * nodes[i] / length;
            v += a_k[k] * std::cos(phase) + b_k[k] * std::sin(phase);
        }
        r[i] = v;
    }
    if (r.empty()) {
        return r;
    }
    const double lo = *std::min_element(r.begin(), r.end());
    double mean = 0.0;
    for (double& v : r) {
        v -= lo;
        mean += v;
    }
    mean /= static_cast<double>(r.size());
    if (!(mean > 0.0)) {
        std::fill(r.begin(), r.end(), 1.0);
        return r;
    }
    for (double& v : r) {
        v /= mean;
    }
    return r;
}

FSample sample_f(Rng& rng, const Discretization& disc) {
    FSample s;
    s.alpha = rng.uniform();
    s.r_field = random_field(rng, disc.nodes, disc.b - disc.a);
    s.values.resize(disc.nodes.size());
    for (std::size_t i = 0; i < s.values.size(); ++i) {
        s.values[i] = (1.0 - s.alpha) + s.alpha * s.r_field[i];
    }
    return s;
}

Vector reaction_coefficient(std::span<const double> nodes) {
    Vector q(nodes.size(), 0.0);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i] >= kReactionStart && nodes[i] <= kReactionEnd) {
            q[i] = kReactionValue;
        }
    }
    return q;
}

CoefficientSample sample_coefficients(Rng& rng, const Discretization& disc) {
    CoefficientSample c;
    KSample K = sample_K(rng, disc);
    FSample f = sample_f(rng, disc);
    c.alpha_K = K.alpha;
    c.omega = K.omega;
    c.K_values = std::move(K.values);
    c.alpha_f = f.alpha;
    c.r_field = std::move(f.r_field);
    c.f_values = std::move(f.values);
    c.q_values = reaction_coefficient(disc.nodes);
    c.v_alpha = rng.uniform(-2.0, 2.0);
    return c;
}

DenseMatrix assemble_operator(EquationKind kind, const CoefficientSample& coeffs,
                              const Discretization& disc) {
    const std::size_t n = disc.N + 1;
    if (coeffs.K_values.size() != n) {
        throw ShapeMismatch("assemble_operator: coefficient length differs from node count");
    }
    DenseMatrix DK = disc.D;
    for (std::size_t i = 0; i < n; ++i) {
        auto row = DK.row(i);
        for (std::size_t k = 0; k < n; ++k) {
            row[k] *= coeffs.K_values[k];
        }
    }
    DenseMatrix L = linalg::matmul(DK, disc.D);
    for (double& v : L.data()) {
        v = -v;
    }
    if (kind == EquationKind::ReactionDiffusion) {
        for (std::size_t i = 0; i < n; ++i) {
            L(i, i) += coeffs.q_values[i];
        }
    } else if (kind == EquationKind::AdvectionDiffusion) {
        // Conservative form d/dx (v u) with constant v.
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                L(i, j) += disc.D(i, j) * coeffs.v_alpha;
            }
        }
    }
    const std::size_t m = disc.interior_size();
    DenseMatrix A(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            A(i, j) = L(i + 1, j + 1);
        }
    }
    return A;
}

Vector interior(std::span<const double> full) {
    if (full.size() < 2) {
        return {};
    }
    return {full.begin() + 1, full.end() - 1};
}

namespace {

std::optional<LinearSystemSample> try_make_sample(EquationKind kind, const Discretization& disc,
                                                  std::uint64_t seed,
                                                  const GenerateOptions& options) {
    Rng rng(seed);
    const CoefficientSample coeffs = sample_coefficients(rng, disc);
    LinearSystemSample s;
    s.kind = kind;
    s.seed = seed;
    s.A = assemble_operator(kind, coeffs, disc);
    s.b = interior(coeffs.f_values);
    if (!linalg::all_finite(s.A.data()) || !linalg::all_finite(s.b)) {
        return std::nullopt;
    }
    try {
        s.x = linalg::lu_solve(s.A, s.b);
    } catch (const SingularMatrix&) {
        return std::nullopt;
    }
    if (!linalg::all_finite(s.x) || linalg::norm_inf(s.x) > options.max_solution_magnitude) {
        return std::nullopt;
    }
    Vector r = linalg::matvec(s.A, s.x);
    for (std::size_t i = 0; i < r.size(); ++i) {
        r[i] -= s.b[i];
    }
    if (linalg::norm2(r) > 1e-8 * linalg::norm2(s.b)) {
        return std::nullopt;
    }
    if (options.compute_condition) {
        try {
            s.cond = linalg::condition_number(s.A);
        } catch (const NumericalError&) {
            return std::nullopt;
        }
        if (!std::isfinite(s.cond) || !(s.cond > 1.0)) {
            return std::nullopt;
        }
    }
    return s;
}

} // namespace

Dataset generate_dataset(EquationKind kind, std::size_t count, std::size_t dim,
                         std::uint64_t seed, const GenerateOptions& options) {
    if (dim < 4) {
        throw DatasetError("generate_dataset: dimension must be at least 4");
    }
    const Discretization disc = make_discretization(degree_for_dimension(dim));

    Dataset out;
    out.manifest.kind = kind;
    out.manifest.count = count;
    out.manifest.dim = dim;
    out.manifest.master_seed = seed;
    out.samples.resize(count);
    std::vector<std::size_t> rejected(count, 0);

    // Give up on a slot long before the global 10% budget could be met.
    constexpr std::size_t max_attempts = 64;
    std::atomic<bool> exhausted{false};
    auto fill_slot = [&](std::size_t i) {
        for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
            auto s = try_make_sample(kind, disc, derive_seed(seed, i, attempt), options);
            if (s) {
                out.samples[i] = std::move(*s);
                return;
            }
            ++rejected[i];
        }
        exhausted = true;
    };

    const unsigned threads = std::max(1U, options.threads);
    if (threads == 1 || count < 2) {
        for (std::size_t i = 0; i < count; ++i) {
            fill_slot(i);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) {
                    fill_slot(i);
                }
            });
        }
    }

    std::size_t total_rejected = 0;
    for (std::size_t r : rejected) {
        total_rejected += r;
    }
    out.manifest.rejections = total_rejected;
    const double attempts = static_cast<double>(count + total_rejected);
    if (exhausted || (count > 0 && static_cast<double>(total_rejected) > 0.1 * attempts)) {
        throw DatasetError("generate_dataset: rejection rate exceeded 10% (" +
                           std::to_string(total_rejected) + " rejected)");
    }
    return out;
}

Vector add_noise(std::span<const double> b, double level, Rng& rng) {
    if (level < 0.0) {
        throw DataError("add_noise: level must be nonnegative");
    }
    Vector out(b.begin(), b.end());
    if (level == 0.0 || b.empty()) {
        return out;
    }
    Vector g(b.size());
    for (double& v : g) {
        v = rng.normal();
    }
    const double scale = level * linalg::norm2(b) / linalg::norm2(g);
    for (std::size_t i = 0; i < b.size(); ++i) {
        out[i] += scale * g[i];
    }
    return out;
}

double median(std::vector<double> values) {
    if (values.empty()) {
        throw DataError("median of an empty set");
    }
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) {
        return upper;
    }
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

} // namespace algebraformer::bvp
