#include <doctest.h>

#include "algebraformer/errors.hpp"
#include "algebraformer/linalg.hpp"
#include "helpers.hpp"

using namespace algebraformer;
using namespace algebraformer::linalg;
using testutil::hilbert;
using testutil::max_abs_diff;

namespace {

double frob_orthogonality_defect(const DenseMatrix& Q) {
    const DenseMatrix G = matmul(Q.transposed(), Q);
    double s = 0.0;
    for (std::size_t i = 0; i < G.rows(); ++i) {
        for (std::size_t j = 0; j < G.cols(); ++j) {
            const double d = G(i, j) - (i == j ? 1.0 : 0.0);
            s += d * d;
        }
    }
    return std::sqrt(s);
}

} // namespace

TEST_CASE("lu_solve small cases") {
    CHECK(lu_solve(DenseMatrix::identity(3), Vector{1, 2, 3}) == Vector{1, 2, 3});
    const Vector x = lu_solve(DenseMatrix{{2, 0}, {0, 4}}, Vector{2, 4});
    CHECK(max_abs_diff(x, Vector{1, 1}) == 0.0);
}

TEST_CASE("lu_solve recovers the ones vector for Hilbert(4)") {
    const DenseMatrix H = hilbert(4);
    const Vector b = matvec(H, Vector(4, 1.0));
    CHECK(max_abs_diff(lu_solve(H, b), Vector(4, 1.0)) <= 1e-9);
}

TEST_CASE("lu_solve rejects singular and misshaped input") {
    CHECK_THROWS_AS(lu_solve(DenseMatrix{{1, 2}, {2, 4}}, Vector{1, 1}), SingularMatrix);
    CHECK_THROWS_AS(lu_solve(DenseMatrix(2, 3), Vector{1, 1}), ShapeMismatch);
    CHECK_THROWS_AS(lu_solve(DenseMatrix::identity(2), Vector{1, 1, 1}), ShapeMismatch);
}

TEST_CASE("lu_solve residual scales with the condition number") {
    Rng rng(3);
    for (std::size_t n = 2; n <= 12; ++n) {
        const DenseMatrix A = testutil::random_matrix(n, n, rng);
        const double cond = condition_number(A);
        if (!(cond < 1e6)) {
            continue;
        }
        const Vector b = testutil::random_vector(n, rng);
        const Vector x = lu_solve(A, b);
        Vector r = matvec(A, x);
        for (std::size_t i = 0; i < n; ++i) {
            r[i] -= b[i];
        }
        CHECK(norm2(r) / norm2(b) <= cond * 1e-13);
    }
}

TEST_CASE("lu_solve is invariant under row permutation") {
    Rng rng(8);
    const DenseMatrix A = testutil::random_matrix(6, 6, rng);
    const Vector b = testutil::random_vector(6, rng);
    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    DenseMatrix PA(6, 6);
    Vector Pb(6);
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = 0; j < 6; ++j) {
            PA(i, j) = A(perm[i], j);
        }
        Pb[i] = b[perm[i]];
    }
    CHECK(max_abs_diff(lu_solve(A, b), lu_solve(PA, Pb)) <= 1e-12);
}

TEST_CASE("qr_least_squares examples") {
    CHECK(max_abs_diff(qr_least_squares(DenseMatrix::identity(2), Vector{5, 7}), Vector{5, 7}) <= 1e-14);
    const Vector x = qr_least_squares(DenseMatrix{{1}, {1}}, Vector{0, 2});
    REQUIRE(x.size() == 1);
    CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-14));

    Rng rng(4);
    const DenseMatrix A = testutil::random_matrix(8, 4, rng);
    const Vector xs = testutil::random_vector(4, rng);
    CHECK(max_abs_diff(qr_least_squares(A, matvec(A, xs)), xs) <= 1e-9);
}

TEST_CASE("qr_least_squares reports rank deficiency") {
    CHECK_THROWS_AS(qr_least_squares(DenseMatrix{{1, 1}, {1, 1}, {1, 1}}, Vector{1, 2, 3}), RankDeficient);
}

TEST_CASE("svd_least_squares examples") {
    CHECK(max_abs_diff(svd_least_squares(DenseMatrix::identity(3), Vector{1, -2, 3}, 1.0), Vector{1, -2, 3}) <=
          1e-14);
    const Vector x = svd_least_squares(DenseMatrix{{1, 0}, {0, 1e-9}}, Vector{1, 1}, 1e-6);
    CHECK(x[0] == doctest::Approx(1.0));
    CHECK(x[1] == 0.0);

    const DenseMatrix H = hilbert(4);
    CHECK(max_abs_diff(svd_least_squares(H, matvec(H, Vector(4, 1.0)), 1e-15), Vector(4, 1.0)) <= 1e-6);
}

TEST_CASE("qr and svd agree on full-rank tall systems") {
    Rng rng(12);
    for (int trial = 0; trial < 5; ++trial) {
        const DenseMatrix A = testutil::random_matrix(10, 5, rng);
        const Vector b = testutil::random_vector(10, rng);
        const Vector xq = qr_least_squares(A, b);
        const Vector xs = svd_least_squares(A, b, 1e-15);
        CHECK(max_abs_diff(xq, xs) <= 1e-8 * norm_inf(xq));
    }
}

TEST_CASE("svd examples") {
    const SvdResult d = svd(DenseMatrix{{3, 0}, {0, 1}});
    CHECK(d.singular_values[0] == doctest::Approx(3.0));
    CHECK(d.singular_values[1] == doctest::Approx(1.0));
    const SvdResult p = svd(DenseMatrix{{0, 1}, {1, 0}});
    CHECK(p.singular_values[0] == doctest::Approx(1.0));
    CHECK(p.singular_values[1] == doctest::Approx(1.0));
}

TEST_CASE("svd of Hilbert(4) matches the high-precision condition number") {
    // 50-digit reference value.
    const double expected = 15513.738738932588;
    const SvdResult s = svd(hilbert(4));
    const double ratio = s.singular_values.front() / s.singular_values.back();
    CHECK(std::abs(ratio - expected) / expected <= 0.01);
    CHECK(condition_number(hilbert(4)) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("svd reconstruction and orthogonality") {
    Rng rng(5);
    for (auto [m, n] : {std::pair<std::size_t, std::size_t>{6, 6}, {9, 4}, {4, 7}}) {
        const DenseMatrix A = testutil::random_matrix(m, n, rng);
        const SvdResult s = svd(A);
        for (std::size_t i = 0; i + 1 < s.singular_values.size(); ++i) {
            CHECK(s.singular_values[i] >= s.singular_values[i + 1]);
        }
        CHECK(s.singular_values.back() >= 0.0);
        DenseMatrix US = s.U;
        for (std::size_t i = 0; i < US.rows(); ++i) {
            for (std::size_t k = 0; k < US.cols(); ++k) {
                US(i, k) *= s.singular_values[k];
            }
        }
        const DenseMatrix R = matmul(US, s.V.transposed());
        double err = 0.0;
        for (std::size_t i = 0; i < A.data().size(); ++i) {
            err += (R.data()[i] - A.data()[i]) * (R.data()[i] - A.data()[i]);
        }
        CHECK(std::sqrt(err) / frobenius_norm(A) <= 1e-10);
        CHECK(frob_orthogonality_defect(s.U) <= 1e-10);
        CHECK(frob_orthogonality_defect(s.V) <= 1e-10);
    }
}

TEST_CASE("condition_number examples") {
    CHECK(condition_number(DenseMatrix::identity(5)) == doctest::Approx(1.0));
    CHECK(condition_number(DenseMatrix{{10, 0}, {0, 0.1}}) == doctest::Approx(100.0));
    CHECK(std::isinf(condition_number(DenseMatrix{{1, 1}, {1, 1}})));
}
