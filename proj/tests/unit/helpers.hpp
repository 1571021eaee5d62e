#pragma once

#include <cmath>
#include <span>

#include "algebraformer/linalg.hpp"
#include "algebraformer/rng.hpp"

namespace testutil {

using algebraformer::linalg::DenseMatrix;
using algebraformer::linalg::Vector;

inline DenseMatrix hilbert(std::size_t n) {
    DenseMatrix H(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            H(i, j) = 1.0 / static_cast<double>(i + j + 1);
        }
    }
    return H;
}

inline DenseMatrix random_matrix(std::size_t m, std::size_t n, algebraformer::Rng& rng) {
    DenseMatrix A(m, n);
    for (double& v : A.data()) {
        v = rng.normal();
    }
    return A;
}

inline Vector random_vector(std::size_t n, algebraformer::Rng& rng) {
    Vector v(n);
    for (double& x : v) {
        x = rng.normal();
    }
    return v;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

} // namespace testutil
