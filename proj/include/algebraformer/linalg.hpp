#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace algebraformer::linalg {

using Vector = std::vector<double>;

/// Row-major dense matrix of doubles.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

    static DenseMatrix identity(std::size_t n);
    static DenseMatrix diagonal(std::span<const double> d);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }
    bool square() const { return rows_ == cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    DenseMatrix transposed() const;

    friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

struct SvdResult {
    DenseMatrix U;                ///< rows(A) x k, orthonormal columns
    Vector singular_values;       ///< nonincreasing, length k = min(rows, cols)
    DenseMatrix V;                ///< cols(A) x k, orthonormal columns
};

// Basic kernels.
Vector matvec(const DenseMatrix& A, std::span<const double> x);
Vector matvec_transposed(const DenseMatrix& A, std::span<const double> x);
DenseMatrix matmul(const DenseMatrix& A, const DenseMatrix& B);
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);
double norm_inf(std::span<const double> v);
double norm_inf(const DenseMatrix& A);   ///< max absolute row sum
double frobenius_norm(const DenseMatrix& A);
bool all_finite(std::span<const double> v);

/// Solves A x = b by Gaussian elimination with partial pivoting.
///
/// The pivot is the first entry of largest magnitude in the column, so
/// labels are reproducible. Throws SingularMatrix when a pivot falls below
/// 1e-14 * ||A||_inf.
Vector lu_solve(const DenseMatrix& A, std::span<const double> b);

/// Least-squares solution of min ||A x - b||_2 via Householder QR.
/// Throws RankDeficient when |R_kk| < 1e-12 * ||A||_F.
Vector qr_least_squares(const DenseMatrix& A, std::span<const double> b);

/// Truncated pseudoinverse solution; singular values below rcond * sigma_max
/// are discarded.
Vector svd_least_squares(const DenseMatrix& A, std::span<const double> b, double rcond);

/// One-sided (Hestenes) Jacobi SVD. Throws NoConvergence after 60 sweeps.
SvdResult svd(const DenseMatrix& A);

/// sigma_max / sigma_min, +inf for singular A.
double condition_number(const DenseMatrix& A);

} // namespace algebraformer::linalg
