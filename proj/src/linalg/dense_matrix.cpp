#include "algebraformer/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "algebraformer/errors.hpp"

namespace algebraformer::linalg {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeMismatch("DenseMatrix: data length does not equal rows*cols");
    }
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) {
            throw ShapeMismatch("DenseMatrix: ragged initializer");
        }
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
    DenseMatrix I(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        I(i, i) = 1.0;
    }
    return I;
}

DenseMatrix DenseMatrix::diagonal(std::span<const double> d) {
    DenseMatrix D(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        D(i, i) = d[i];
    }
    return D;
}

DenseMatrix DenseMatrix::transposed() const {
    DenseMatrix T(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i) {
        for (std::size_t j = 0; j < cols_; ++j) {
            T(j, i) = (*this)(i, j);
        }
    }
    return T;
}

Vector matvec(const DenseMatrix& A, std::span<const double> x) {
    if (A.cols() != x.size()) {
        throw ShapeMismatch("matvec: dimension mismatch");
    }
    Vector y(A.rows(), 0.0);
    for (std::size_t i = 0; i < A.rows(); ++i) {
        y[i] = dot(A.row(i), x);
    }
    return y;
}

Vector matvec_transposed(const DenseMatrix& A, std::span<const double> x) {
    if (A.rows() != x.size()) {
        throw ShapeMismatch("matvec_transposed: dimension mismatch");
    }
    Vector y(A.cols(), 0.0);
    for (std::size_t i = 0; i < A.rows(); ++i) {
        const auto r = A.row(i);
        const double xi = x[i];
        for (std::size_t j = 0; j < A.cols(); ++j) {
            y[j] += r[j] * xi;
        }
    }
    return y;
}

DenseMatrix matmul(const DenseMatrix& A, const DenseMatrix& B) {
    if (A.cols() != B.rows()) {
        throw ShapeMismatch("matmul: inner dimensions differ");
    }
    DenseMatrix C(A.rows(), B.cols());
    for (std::size_t i = 0; i < A.rows(); ++i) {
        auto c = C.row(i);
        for (std::size_t k = 0; k < A.cols(); ++k) {
            const double a = A(i, k);
            const auto b = B.row(k);
            for (std::size_t j = 0; j < B.cols(); ++j) {
                c[j] += a * b[j];
            }
        }
    }
    return C;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double norm2(std::span<const double> v) {
    // Scaled to avoid overflow/underflow on extreme entries.
    double scale = 0.0;
    for (double x : v) {
        scale = std::max(scale, std::abs(x));
    }
    if (scale == 0.0 || !std::isfinite(scale)) {
        return scale;
    }
    double s = 0.0;
    for (double x : v) {
        const double y = x / scale;
        s += y * y;
    }
    return scale * std::sqrt(s);
}

double norm_inf(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) {
        m = std::max(m, std::abs(x));
    }
    return m;
}

double norm_inf(const DenseMatrix& A) {
    double m = 0.0;
    for (std::size_t i = 0; i < A.rows(); ++i) {
        double s = 0.0;
        for (double x : A.row(i)) {
            s += std::abs(x);
        }
        m = std::max(m, s);
    }
    return m;
}

double frobenius_norm(const DenseMatrix& A) { return norm2(A.data()); }

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

} // namespace algebraformer::linalg
