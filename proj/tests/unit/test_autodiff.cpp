#include <doctest.h>

#include <cmath>

#include "algebraformer/autodiff.hpp"
#include "algebraformer/errors.hpp"
#include "algebraformer/gradcheck.hpp"
#include "algebraformer/rng.hpp"

using namespace algebraformer;
using namespace algebraformer::ad;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.storage()) {
        v = rng.normal();
    }
    return t;
}

} // namespace

TEST_CASE("matmul with identity and its gradient") {
    Tape tape;
    const Tensor M({2, 3}, {1, 2, 3, 4, 5, 6});
    Var I = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    Var m = tape.leaf(M);
    CHECK(matmul(I, m).value() == M);

    Tape t2;
    const Tensor Bv({3, 2}, {1, -1, 2, 0.5, 3, 7});
    Var A = t2.leaf(Tensor({2, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}));
    Var B = t2.leaf(Bv);
    t2.backward(sum(matmul(A, B)));
    // d/dA sum(AB) = 1 B^T: every row holds the row sums of B.
    const Tensor expected({2, 3}, {0, 2.5, 10, 0, 2.5, 10});
    CHECK(A.grad() == expected);
}

TEST_CASE("add passes the adjoint to both inputs") {
    Tape tape;
    Var a = tape.leaf(Tensor({3}, {1, 2, 3}));
    Var b = tape.leaf(Tensor({3}, {4, 5, 6}));
    Var w = tape.constant(Tensor({3}, {7, 8, 9}));
    tape.backward(sum(mul(add(a, b), w)));
    CHECK(a.grad() == Tensor({3}, {7, 8, 9}));
    CHECK(b.grad() == Tensor({3}, {7, 8, 9}));
}

TEST_CASE("adjoints accumulate over a diamond") {
    // y = (x*x) + 3x with x used in three places: dy/dx = 2x + 3.
    Tape tape;
    Var x = tape.leaf(Tensor({2}, {1.5, -2.0}));
    Var y = sum(add(mul(x, x), mul_scalar(x, 3.0)));
    tape.backward(y);
    CHECK(x.grad() == Tensor({2}, {6.0, -1.0}));
}

TEST_CASE("backward twice without zero_grad throws") {
    Tape tape;
    Var x = tape.leaf(Tensor({2}, {1, 2}));
    Var y = sum(mul(x, x));
    tape.backward(y);
    CHECK_THROWS(tape.backward(y));
    CHECK(x.grad() == Tensor({2}, {2, 4}));
    tape.zero_grad();
    tape.backward(y);
    CHECK(x.grad() == Tensor({2}, {2, 4}));
}

TEST_CASE("tape records in topological order") {
    Tape tape;
    Rng rng(1);
    Var x = tape.leaf(random_tensor({2, 3, 4}, rng));
    Var g = tape.leaf(Tensor({4}, 1.0));
    Var b = tape.leaf(Tensor({4}, 0.0));
    Var y = sum(gelu(layer_norm(softmax_last_axis(x), g, b)));
    CHECK(y.id() == tape.size() - 1);
    for (std::size_t id = 0; id < tape.size(); ++id) {
        for (std::size_t in : tape.inputs(id)) {
            CHECK(in < id);
        }
    }
}

TEST_CASE("shape mismatches throw") {
    Tape tape;
    Var a = tape.leaf(Tensor({2, 3}));
    Var b = tape.leaf(Tensor({2, 3}));
    CHECK_THROWS_AS(matmul(a, b), ShapeMismatch);
    CHECK_THROWS_AS(mul(a, tape.leaf(Tensor({3}))), ShapeMismatch);
    CHECK_THROWS_AS(add(a, tape.leaf(Tensor({2}))), ShapeMismatch);
    CHECK_THROWS_AS(reshape(a, {5}), ShapeMismatch);
}

TEST_CASE("layer_norm") {
    Tape tape;
    Var g = tape.constant(Tensor({4}, {2, 3, 4, 5}));
    Var b = tape.constant(Tensor({4}, {0.1, 0.2, 0.3, 0.4}));
    const Tensor out = layer_norm(tape.constant(Tensor({1, 4}, 7.0)), g, b).value();
    CHECK(out == Tensor({1, 4}, {0.1, 0.2, 0.3, 0.4}));

    Rng rng(2);
    const Tensor x = random_tensor({3, 6}, rng);
    const Tensor n = layer_norm(tape.constant(x), tape.constant(Tensor({6}, 1.0)), tape.constant(Tensor({6}, 0.0)))
                         .value();
    for (std::size_t r = 0; r < 3; ++r) {
        double m = 0.0;
        double v = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
            m += n[r * 6 + j] / 6.0;
        }
        for (std::size_t j = 0; j < 6; ++j) {
            v += (n[r * 6 + j] - m) * (n[r * 6 + j] - m) / 6.0;
        }
        CHECK(std::abs(m) <= 1e-12);
        CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("softmax") {
    Tape tape;
    const Tensor u = softmax_last_axis(tape.constant(Tensor({2, 5}, 0.3))).value();
    for (double v : u.storage()) {
        CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
    }
    Rng rng(3);
    Tensor x = random_tensor({3, 4}, rng);
    const Tensor s1 = softmax_last_axis(tape.constant(x)).value();
    for (std::size_t j = 0; j < 4; ++j) {
        x[4 + j] += 123.0;
    }
    const Tensor s2 = softmax_last_axis(tape.constant(x)).value();
    for (std::size_t i = 0; i < s1.numel(); ++i) {
        CHECK(std::abs(s1[i] - s2[i]) <= 1e-12);
    }
    for (std::size_t r = 0; r < 3; ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            total += s1[r * 4 + j];
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }
}

TEST_CASE("causal mask hides later tokens") {
    Tape tape;
    const Tensor s = softmax_last_axis(causal_mask(tape.constant(Tensor({3, 3}, 0.0)))).value();
    CHECK(s == Tensor({3, 3}, {1, 0, 0, 0.5, 0.5, 0, 1.0 / 3, 1.0 / 3, 1.0 / 3}));
}

TEST_CASE("gelu values") {
    CHECK(gelu_value(0.0) == 0.0);
    CHECK(std::abs(gelu_value(-10.0)) <= 1e-8);
    CHECK(gelu_value(10.0) == doctest::Approx(10.0).epsilon(1e-15));
    CHECK(gelu_value(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
    CHECK(gelu_derivative(0.0) == doctest::Approx(0.5));
}

TEST_CASE("mse_loss") {
    Tape tape;
    Var p = tape.leaf(Tensor({1, 4}, {1, 2, 3, 4}));
    CHECK(mse_loss(p, tape.constant(Tensor({1, 4}, {1, 2, 3, 4}))).value().item() == 0.0);
    CHECK(mse_loss(p, tape.constant(Tensor({1, 4}, {0, 1, 2, 3}))).value().item() == 4.0);

    Tape t2;
    Var pred = t2.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
    Var target = t2.constant(Tensor({2, 2}, {0, 0, 1, 1}));
    Var loss = mse_loss(pred, target);
    CHECK(loss.value().item() == doctest::Approx((1 + 4 + 4 + 9) / 2.0));
    t2.backward(loss);
    CHECK(pred.grad() == Tensor({2, 2}, {1, 2, 2, 3}));
}

TEST_CASE("gradcheck on simple functions") {
    const double e = gradcheck([](Tape&, Var x) { return sum(mul(x, x)); }, Tensor({1}, {3.0}));
    CHECK(e < 1e-8);

    Rng rng(4);
    const Tensor W = random_tensor({4, 3}, rng);
    const Tensor y = random_tensor({2, 3}, rng);
    const double e2 = gradcheck(
        [&](Tape& t, Var x) { return mse_loss(matmul(x, t.constant(W)), t.constant(y)); },
        random_tensor({2, 4}, rng));
    CHECK(e2 < 1e-6);
}

TEST_CASE("the full derivative suite passes and catches a broken GELU backward") {
    const auto results = checks::run_gradchecks();
    CHECK(checks::all_passed(results));
    CHECK(results.size() > 100);

    testing::set_gelu_backward_fault(true);
    const auto broken = checks::run_gradchecks("gelu");
    testing::set_gelu_backward_fault(false);
    CHECK_FALSE(checks::all_passed(broken));
    CHECK(checks::all_passed(checks::run_gradchecks("gelu")));
    CHECK_THROWS_AS(checks::run_gradchecks("no_such_op"), DataError);
}
