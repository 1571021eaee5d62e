#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "algebraformer/linalg.hpp"

namespace algebraformer::cheb {

using linalg::DenseMatrix;
using linalg::Vector;

/// Chebyshev-Gauss-Lobatto grid of degree N (N+1 nodes).
///
/// Reference nodes are cos(pi j / N), descending from +1 to -1. The grid
/// also carries the physical interval [a, b] it is mapped onto.
struct ChebyshevGrid {
    std::size_t N = 0;
    Vector nodes;        ///< reference coordinates, nodes[0] = 1, nodes[N] = -1
    double a = -1.0;
    double b = 1.0;

    std::size_t size() const { return nodes.size(); }
    /// a + (b-a)(x+1)/2 for each node; endpoints are exact.
    Vector physical_nodes() const;
    double to_physical(double reference) const;
    double to_reference(double physical) const;
};

/// Differentiation matrix together with the grid it acts on.
struct DiffMatrix {
    DenseMatrix D;
    ChebyshevGrid grid;
};

ChebyshevGrid gauss_lobatto_nodes(std::size_t N);

/// Closed-form Chebyshev differentiation matrix on the reference grid. The
/// diagonal is the negative row sum of the off-diagonal entries.
DiffMatrix diff_matrix(const ChebyshevGrid& grid);

/// The diagonal given by the closed form (corner entries +-(2N^2+1)/6 and
/// -x_i / (2(1-x_i^2)) inside). Kept for cross-checking diff_matrix.
Vector closed_form_diagonal(const ChebyshevGrid& grid);

/// Chain rule for the affine map [-1, 1] -> [a, b]: D is scaled by 2/(b-a).
DiffMatrix scale_to_interval(const DiffMatrix& D, double a, double b);

/// Evaluates the polynomial interpolant of node values at physical x via
/// the barycentric formula with Gauss-Lobatto weights.
double barycentric_eval(const ChebyshevGrid& grid, std::span<const double> values, double x);

using ScalarFunction = std::function<double(double)>;

struct ConvergencePoint {
    std::size_t N;
    double max_error;
};

/// Max node error of D*u(x_j) against u'(x_j) on [-1, 1] for each degree.
std::vector<ConvergencePoint> convergence_profile(const ScalarFunction& u,
                                                  const ScalarFunction& du,
                                                  std::span<const std::size_t> degrees);

} // namespace algebraformer::cheb
