#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "algebraformer/errors.hpp"
#include "algebraformer/linalg.hpp"

namespace algebraformer::linalg {

Vector lu_solve(const DenseMatrix& A, std::span<const double> b) {
    if (!A.square()) {
        throw ShapeMismatch("lu_solve: matrix is not square");
    }
    const std::size_t n = A.rows();
    if (b.size() != n) {
        throw ShapeMismatch("lu_solve: right-hand side length mismatch");
    }
    const double threshold = 1e-14 * norm_inf(A);

    DenseMatrix LU = A;
    Vector x(b.begin(), b.end());

    for (std::size_t k = 0; k < n; ++k) {
        // First entry of maximal magnitude wins ties.
        std::size_t piv = k;
        double best = std::abs(LU(k, k));
        for (std::size_t i = k + 1; i < n; ++i) {
            const double v = std::abs(LU(i, k));
            if (v > best) {
                best = v;
                piv = i;
            }
        }
        if (!(best >= threshold) || best == 0.0) {
            throw SingularMatrix("lu_solve: pivot below 1e-14*||A||_inf at column " +
                                 std::to_string(k));
        }
        if (piv != k) {
            std::swap_ranges(LU.row(k).begin(), LU.row(k).end(), LU.row(piv).begin());
            std::swap(x[k], x[piv]);
        }
        const auto pivot_row = LU.row(k);
        const double diag = pivot_row[k];
        for (std::size_t i = k + 1; i < n; ++i) {
            auto r = LU.row(i);
            const double factor = r[k] / diag;
            if (factor == 0.0) {
                continue;
            }
            r[k] = 0.0;
            for (std::size_t j = k + 1; j < n; ++j) {
                r[j] -= factor * pivot_row[j];
            }
            x[i] -= factor * x[k];
        }
    }

    for (std::size_t i = n; i-- > 0;) {
        const auto r = LU.row(i);
        double s = x[i];
        for (std::size_t j = i + 1; j < n; ++j) {
            s -= r[j] * x[j];
        }
        x[i] = s / r[i];
    }
    return x;
}

Vector qr_least_squares(const DenseMatrix& A, std::span<const double> b) {
    const std::size_t m = A.rows();
    const std::size_t n = A.cols();
    if (m < n) {
        throw ShapeMismatch("qr_least_squares: requires rows >= cols");
    }
    if (b.size() != m) {
        throw ShapeMismatch("qr_least_squares: right-hand side length mismatch");
    }
    const double threshold = 1e-12 * frobenius_norm(A);

    // Column-major copy so Householder reflections touch contiguous memory.
    DenseMatrix R = A.transposed();
    Vector y(b.begin(), b.end());
    Vector v(m);

    for (std::size_t k = 0; k < n; ++k) {
        auto col = R.row(k);
        const double alpha = norm2(col.subspan(k));
        if (alpha == 0.0) {
            throw RankDeficient("qr_least_squares: zero column at " + std::to_string(k));
        }
        const double beta = col[k] >= 0.0 ? -alpha : alpha;
        for (std::size_t i = k; i < m; ++i) {
            v[i] = col[i];
        }
        v[k] -= beta;
        const double vnorm2 = std::inner_product(v.begin() + static_cast<std::ptrdiff_t>(k),
                                                 v.end(), v.begin() + static_cast<std::ptrdiff_t>(k),
                                                 0.0);
        if (vnorm2 > 0.0) {
            for (std::size_t j = k; j < n; ++j) {
                auto c = R.row(j);
                double s = 0.0;
                for (std::size_t i = k; i < m; ++i) {
                    s += v[i] * c[i];
                }
                const double f = 2.0 * s / vnorm2;
                for (std::size_t i = k; i < m; ++i) {
                    c[i] -= f * v[i];
                }
            }
            double s = 0.0;
            for (std::size_t i = k; i < m; ++i) {
                s += v[i] * y[i];
            }
            const double f = 2.0 * s / vnorm2;
            for (std::size_t i = k; i < m; ++i) {
                y[i] -= f * v[i];
            }
        }
        if (std::abs(R(k, k)) < threshold) {
            throw RankDeficient("qr_least_squares: |R_kk| below 1e-12*||A||_F at " +
                                std::to_string(k));
        }
    }

    // R is stored transposed: R(j, i) holds the upper-triangular entry (i, j).
    Vector x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = y[i];
        for (std::size_t j = i + 1; j < n; ++j) {
            s -= R(j, i) * x[j];
        }
        x[i] = s / R(i, i);
    }
    return x;
}

namespace {

// Hestenes rotations on the rows of W (the columns of the input). Returns
// the number of sweeps used.
int jacobi_orthogonalize(DenseMatrix& W, DenseMatrix& V) {
    const std::size_t k = W.rows();
    const std::size_t m = W.cols();
    const double tol = static_cast<double>(std::max<std::size_t>(m, 1)) *
                       std::numeric_limits<double>::epsilon();
    constexpr int max_sweeps = 60;

    for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t i = 0; i + 1 < k; ++i) {
            for (std::size_t j = i + 1; j < k; ++j) {
                auto wi = W.row(i);
                auto wj = W.row(j);
                double alpha = 0.0;
                double beta = 0.0;
                double gamma = 0.0;
                for (std::size_t r = 0; r < m; ++r) {
                    alpha += wi[r] * wi[r];
                    beta += wj[r] * wj[r];
                    gamma += wi[r] * wj[r];
                }
                if (alpha == 0.0 || beta == 0.0 ||
                    std::abs(gamma) <= tol * std::sqrt(alpha * beta)) {
                    continue;
                }
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t r = 0; r < m; ++r) {
                    const double a = wi[r];
                    const double b = wj[r];
                    wi[r] = c * a - s * b;
                    wj[r] = s * a + c * b;
                }
                auto vi = V.row(i);
                auto vj = V.row(j);
                for (std::size_t r = 0; r < V.cols(); ++r) {
                    const double a = vi[r];
                    const double b = vj[r];
                    vi[r] = c * a - s * b;
                    vj[r] = s * a + c * b;
                }
            }
        }
        if (!rotated) {
            return sweep;
        }
    }
    throw NoConvergence("svd: Jacobi sweeps exceeded 60");
}

// Fills zero rows of Q (k x m, rows orthonormal where nonzero) with unit
// vectors orthogonal to the others.
void complete_orthonormal_rows(DenseMatrix& Q, const std::vector<bool>& valid) {
    const std::size_t k = Q.rows();
    const std::size_t m = Q.cols();
    std::size_t candidate = 0;
    for (std::size_t i = 0; i < k; ++i) {
        if (valid[i]) {
            continue;
        }
        while (candidate < m) {
            Vector e(m, 0.0);
            e[candidate++] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t j = 0; j < k; ++j) {
                    if (j == i || (!valid[j] && j > i)) {
                        continue;
                    }
                    const double p = dot(Q.row(j), e);
                    for (std::size_t r = 0; r < m; ++r) {
                        e[r] -= p * Q(j, r);
                    }
                }
            }
            const double nrm = norm2(e);
            if (nrm > 1e-8) {
                for (std::size_t r = 0; r < m; ++r) {
                    Q(i, r) = e[r] / nrm;
                }
                break;
            }
        }
    }
}

} // namespace

SvdResult svd(const DenseMatrix& A) {
    if (A.empty()) {
        throw ShapeMismatch("svd: empty matrix");
    }
    if (!all_finite(A.data())) {
        throw NumericalError("svd: non-finite entries");
    }
    // Work on the orientation with at most as many columns as rows.
    const bool wide = A.cols() > A.rows();
    DenseMatrix W = wide ? A : A.transposed();   // rows of W = columns of the tall matrix
    const std::size_t k = W.rows();
    const std::size_t m = W.cols();
    DenseMatrix Vt = DenseMatrix::identity(k);    // rows are right singular vectors

    jacobi_orthogonalize(W, Vt);

    Vector sigma(k);
    for (std::size_t i = 0; i < k; ++i) {
        sigma[i] = norm2(W.row(i));
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

    const double smax = sigma[order.front()];
    DenseMatrix Ut(k, m);
    DenseMatrix Vs(k, k);
    Vector sorted(k);
    std::vector<bool> valid(k, true);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t src = order[i];
        sorted[i] = sigma[src];
        const bool usable = sigma[src] > 0.0 && sigma[src] > smax * 1e-300;
        valid[i] = usable;
        for (std::size_t r = 0; r < m; ++r) {
            Ut(i, r) = usable ? W(src, r) / sigma[src] : 0.0;
        }
        std::copy(Vt.row(src).begin(), Vt.row(src).end(), Vs.row(i).begin());
    }
    complete_orthonormal_rows(Ut, valid);

    SvdResult out;
    out.singular_values = std::move(sorted);
    if (wide) {
        // A = W^T-orientation: the roles of U and V swap.
        out.U = Vs.transposed();
        out.V = Ut.transposed();
    } else {
        out.U = Ut.transposed();
        out.V = Vs.transposed();
    }
    return out;
}

Vector svd_least_squares(const DenseMatrix& A, std::span<const double> b, double rcond) {
    if (!(rcond > 0.0 && rcond <= 1.0)) {
        throw DataError("svd_least_squares: rcond must lie in (0, 1]");
    }
    if (b.size() != A.rows()) {
        throw ShapeMismatch("svd_least_squares: right-hand side length mismatch");
    }
    const SvdResult s = svd(A);
    const double cutoff = rcond * s.singular_values.front();
    const std::size_t k = s.singular_values.size();
    Vector coeff(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        const double sv = s.singular_values[i];
        if (sv == 0.0 || sv < cutoff) {
            continue;
        }
        double proj = 0.0;
        for (std::size_t r = 0; r < A.rows(); ++r) {
            proj += s.U(r, i) * b[r];
        }
        coeff[i] = proj / sv;
    }
    Vector x(A.cols(), 0.0);
    for (std::size_t r = 0; r < A.cols(); ++r) {
        double v = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            v += s.V(r, i) * coeff[i];
        }
        x[r] = v;
    }
    return x;
}

double condition_number(const DenseMatrix& A) {
    if (!A.square()) {
        throw ShapeMismatch("condition_number: matrix is not square");
    }
    const SvdResult s = svd(A);
    const double smin = s.singular_values.back();
    if (smin == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return s.singular_values.front() / smin;
}

} // namespace algebraformer::linalg
