#include "algebraformer/chebyshev.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "algebraformer/errors.hpp"

namespace algebraformer::cheb {

double ChebyshevGrid::to_physical(double reference) const {
    if (a == -1.0 && b == 1.0) {
        return reference;
    }
    return a + (b - a) * (reference + 1.0) / 2.0;
}

double ChebyshevGrid::to_reference(double physical) const {
    if (a == -1.0 && b == 1.0) {
        return physical;
    }
    return (2.0 * physical - a - b) / (b - a);
}

Vector ChebyshevGrid::physical_nodes() const {
    Vector out(nodes.size());
    for (std::size_t j = 0; j < nodes.size(); ++j) {
        out[j] = to_physical(nodes[j]);
    }
    if (!out.empty()) {
        out.front() = b;
        out.back() = a;
    }
    return out;
}

ChebyshevGrid gauss_lobatto_nodes(std::size_t N) {
    if (N == 0) {
        throw InvalidDegree("gauss_lobatto_nodes: degree must be at least 1");
    }
    ChebyshevGrid grid;
    grid.N = N;
    grid.nodes.resize(N + 1);
    // sin form of cos(pi j / N): exactly antisymmetric about the midpoint.
    const double n = static_cast<double>(N);
    for (std::size_t j = 0; j <= N; ++j) {
        const double k = n - 2.0 * static_cast<double>(j);
        grid.nodes[j] = std::sin(std::numbers::pi * k / (2.0 * n));
    }
    grid.nodes.front() = 1.0;
    grid.nodes.back() = -1.0;
    return grid;
}

DiffMatrix diff_matrix(const ChebyshevGrid& grid) {
    const std::size_t n = grid.size();
    const std::size_t N = grid.N;
    const auto& x = grid.nodes;
    DenseMatrix D(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const double ci = (i == 0 || i == N) ? 2.0 : 1.0;
        double row_sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) {
                continue;
            }
            const double cj = (j == 0 || j == N) ? 2.0 : 1.0;
            const double sign = ((i + j) % 2 == 0) ? 1.0 : -1.0;
            const double v = (ci / cj) * sign / (x[i] - x[j]);
            D(i, j) = v;
            row_sum += v;
        }
        D(i, i) = -row_sum;
    }
    return {std::move(D), grid};
}

Vector closed_form_diagonal(const ChebyshevGrid& grid) {
    const std::size_t N = grid.N;
    const double corner = (2.0 * static_cast<double>(N * N) + 1.0) / 6.0;
    Vector d(grid.size());
    for (std::size_t i = 0; i <= N; ++i) {
        const double xi = grid.nodes[i];
        if (i == 0) {
            d[i] = corner;
        } else if (i == N) {
            d[i] = -corner;
        } else {
            d[i] = -xi / (2.0 * (1.0 - xi * xi));
        }
    }
    return d;
}

DiffMatrix scale_to_interval(const DiffMatrix& D, double a, double b) {
    if (!(a < b)) {
        throw InvalidInterval("scale_to_interval: requires a < b");
    }
    // D is defined on the reference grid; rescale relative to its current interval.
    const double factor = (D.grid.b - D.grid.a) / (b - a);
    DiffMatrix out = D;
    if (factor != 1.0) {
        for (double& v : out.D.data()) {
            v *= factor;
        }
    }
    out.grid.a = a;
    out.grid.b = b;
    return out;
}

double barycentric_eval(const ChebyshevGrid& grid, std::span<const double> values, double x) {
    if (values.size() != grid.size()) {
        throw ShapeMismatch("barycentric_eval: value count differs from node count");
    }
    constexpr double slack = 1e-12;
    if (x < grid.a - slack || x > grid.b + slack) {
        throw OutOfDomain("barycentric_eval: point outside the grid interval");
    }
    const Vector phys = grid.physical_nodes();
    for (std::size_t j = 0; j < phys.size(); ++j) {
        if (x == phys[j]) {
            return values[j];
        }
    }
    const double t = std::clamp(grid.to_reference(x), -1.0, 1.0);
    double num = 0.0;
    double den = 0.0;
    const std::size_t N = grid.N;
    for (std::size_t j = 0; j <= N; ++j) {
        const double diff = t - grid.nodes[j];
        if (diff == 0.0) {
            return values[j];
        }
        double w = (j % 2 == 0) ? 1.0 : -1.0;
        if (j == 0 || j == N) {
            w *= 0.5;
        }
        const double c = w / diff;
        num += c * values[j];
        den += c;
    }
    return num / den;
}

std::vector<ConvergencePoint> convergence_profile(const ScalarFunction& u,
                                                  const ScalarFunction& du,
                                                  std::span<const std::size_t> degrees) {
    std::vector<ConvergencePoint> out;
    out.reserve(degrees.size());
    for (std::size_t N : degrees) {
        const ChebyshevGrid grid = gauss_lobatto_nodes(N);
        const DiffMatrix D = diff_matrix(grid);
        Vector samples(grid.size());
        for (std::size_t j = 0; j < grid.size(); ++j) {
            samples[j] = u(grid.nodes[j]);
        }
        const Vector deriv = linalg::matvec(D.D, samples);
        double err = 0.0;
        for (std::size_t j = 0; j < grid.size(); ++j) {
            err = std::max(err, std::abs(deriv[j] - du(grid.nodes[j])));
        }
        out.push_back({N, err});
    }
    return out;
}

} // namespace algebraformer::cheb
