#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <memory>

#include "algebraformer/errors.hpp"
#include "algebraformer/newton.hpp"
#include "helpers.hpp"

using namespace algebraformer;
using namespace algebraformer::newton;
using linalg::matvec;
using linalg::norm2;

namespace {

LpProblem tiny_problem(double p) {
    LpProblem prob;
    prob.A = DenseMatrix{{1, 0}, {0, 1}, {1, 1}};
    prob.b = Vector{1, 2, 4};
    prob.p = p;
    return prob;
}

Vector at_b(const LpProblem& prob) {
    return matvec(prob.A.transposed(), prob.b);
}

} // namespace

TEST_CASE("objective and lp norm examples") {
    LpProblem prob;
    prob.A = DenseMatrix::identity(2);
    prob.b = Vector{0, 0};
    prob.p = 2.0;
    CHECK(objective(prob, Vector{3, 4}) == 25.0);
    CHECK(lp_norm(prob, Vector{3, 4}) == doctest::Approx(5.0));
    prob.p = 6.0;
    CHECK(objective(prob, Vector{1, -1}) == 2.0);
    CHECK(residual(tiny_problem(2), Vector{0, 0}) == Vector{-1, -2, -4});
    CHECK_THROWS_AS((LpProblem{DenseMatrix(2, 3), Vector{1, 2}, 6.0}.validate()), DataError);
    CHECK_THROWS_AS((LpProblem{DenseMatrix(3, 2), Vector{1, 2, 3}, 1.0}.validate()), DataError);
}

TEST_CASE("p = 2 gradient and Hessian closed forms") {
    const LpProblem prob = tiny_problem(2.0);
    const Vector x{0.5, -1.0};
    const Vector r = residual(prob, x);
    const Vector g = gradient(prob, x);
    const Vector expected_g = matvec(prob.A.transposed(), r);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(g[i] == doctest::Approx(2.0 * expected_g[i]).epsilon(1e-14));
    }
    const DenseMatrix H = hessian(prob, x);
    const DenseMatrix AtA = linalg::matmul(prob.A.transposed(), prob.A);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            CHECK(H(i, j) == doctest::Approx(2.0 * AtA(i, j)).epsilon(1e-14));
        }
    }
}

TEST_CASE("gradient matches finite differences and the Hessian is symmetric PSD") {
    const LpProblem prob = sample_problem(30, 5, 6.0, 3);
    Rng rng(4);
    const Vector x = testutil::random_vector(5, rng);
    const Vector g = gradient(prob, x);
    const DenseMatrix H = hessian(prob, x);
    const double h = 1e-6;
    for (std::size_t i = 0; i < 5; ++i) {
        Vector xp = x;
        Vector xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd = (objective(prob, xp) - objective(prob, xm)) / (2 * h);
        CHECK(std::abs(fd - g[i]) <= 1e-5 * std::max(1.0, std::abs(g[i])));
        for (std::size_t j = 0; j < 5; ++j) {
            CHECK(H(i, j) == H(j, i));
        }
    }
    for (int trial = 0; trial < 10; ++trial) {
        const Vector v = testutil::random_vector(5, rng);
        CHECK(linalg::dot(v, matvec(H, v)) >= 0.0);
    }
}

TEST_CASE("sampled problems are normalized and positive") {
    const LpProblem prob = sample_problem(40, 6, 6.0, 7);
    CHECK(linalg::frobenius_norm(prob.A) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(norm2(prob.b) == doctest::Approx(1.0).epsilon(1e-14));
    for (double v : prob.A.data()) {
        CHECK(v >= 0.0);
    }
    const LpProblem again = sample_problem(40, 6, 6.0, 7);
    CHECK(again.A == prob.A);
    CHECK(again.b == prob.b);
}

TEST_CASE("Newton solves p = 2 in one step") {
    const LpProblem prob = sample_problem(20, 4, 2.0, 9);
    NewtonOptions opts;
    opts.stop = StopCriterion::GradientNorm;
    opts.tol = 1e-10;
    const NewtonTrajectory t = newton_solve(prob, Vector(4, 0.0), opts);
    CHECK(t.converged);
    CHECK(t.iterations() <= 2);
    CHECK(testutil::max_abs_diff(t.iterates[1], linalg::qr_least_squares(prob.A, prob.b)) <= 1e-10);

    const NewtonTrajectory warm = newton_solve(prob, t.solution(), opts);
    CHECK(warm.iterations() == 0);
    CHECK(warm.converged);
}

TEST_CASE("p = 6 Newton decreases the objective to the same minimum under both stops") {
    const LpProblem prob = sample_problem(200, 10, 6.0, 11);
    NewtonOptions dec;
    const NewtonTrajectory a = newton_solve(prob, Vector(10, 0.0), dec);
    NewtonOptions grad;
    grad.stop = StopCriterion::GradientNorm;
    grad.tol = 1e-10;
    const NewtonTrajectory b = newton_solve(prob, Vector(10, 0.0), grad);
    CHECK(a.converged);
    CHECK(b.converged);
    CHECK(a.stop_reason == StopReason::ObjectiveDecrement);
    for (std::size_t k = 0; k + 1 < a.objectives.size(); ++k) {
        CHECK(a.objectives[k + 1] < a.objectives[k]);
    }
    CHECK(std::abs(a.final_objective() - b.final_objective()) <= 1e-6 * b.final_objective() + 1e-15);
    CHECK(a.gradient_norms.size() == a.iterates.size());
}

TEST_CASE("direction providers") {
    const LpProblem prob = sample_problem(60, 5, 6.0, 13);
    const Vector x0(5, 0.0);
    const AcceleratedResult exact = accelerated_newton(prob, x0, DirectionProvider::exact());
    const NewtonTrajectory ref = newton_solve(prob, x0);
    CHECK(exact.trajectory.iterates == ref.iterates);
    CHECK(exact.timing.iteration_seconds.size() == ref.iterations());

    NewtonOptions opts;
    opts.max_iter = 7;
    const auto zero = DirectionProvider::custom("zero", [](const NewtonState& s) { return Vector(s.x.size(), 0.0); });
    const AcceleratedResult stuck = accelerated_newton(prob, x0, zero, opts);
    CHECK_FALSE(stuck.trajectory.converged);
    CHECK(stuck.trajectory.stop_reason == StopReason::MaxIterExceeded);
    CHECK(stuck.trajectory.iterations() == 7);

    const auto bad = DirectionProvider::custom("bad", [](const NewtonState&) { return Vector(2, 1.0); });
    CHECK_THROWS_AS(accelerated_newton(prob, x0, bad), ShapeMismatch);
}

TEST_CASE("learned provider runs the model on the Newton state") {
    const LpProblem prob = sample_problem(50, 4, 6.0, 15);
    auto weights = std::make_shared<model::ModelWeights>(model::init_weights(model::desk_preset(2, 4), 1));
    const auto provider = DirectionProvider::learned(weights);
    const Vector Atb = at_b(prob);
    const Vector x(4, 0.1);
    const Vector g = gradient(prob, x);
    const NewtonState state{prob, Atb, x, g};
    CHECK(provider(state) == model::predict(*weights, model::encode_newton_state(Atb, x)));
    CHECK(provider.kind() == DirectionProvider::Kind::LearnedModel);
}

TEST_CASE("trajectory records replay to Hessian solves") {
    const TrajectoryDataset data = generate_trajectories(4, 80, 6, 6.0, 1e-5, 17);
    CHECK(data.manifest.converged == data.manifest.lengths.size());
    std::size_t offset = 0;
    for (std::size_t t = 0; t < data.manifest.lengths.size(); ++t) {
        const LpProblem prob = family_problem(data.manifest, data.manifest.problem_ids[t]);
        CHECK(at_b(prob) == data.records[offset].Atb);
        for (std::size_t k = 0; k < data.manifest.lengths[t]; ++k) {
            const TrajectoryRecord& r = data.records[offset + k];
            Vector Hd = matvec(hessian(prob, r.x), r.direction);
            const Vector g = gradient(prob, r.x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                Hd[i] -= g[i];
            }
            CHECK(norm2(Hd) <= 1e-8 * std::max(1.0, norm2(g)));
        }
        offset += data.manifest.lengths[t];
    }
    CHECK(offset == data.records.size());

    const TrajectoryDataset one = generate_trajectories(1, 500, 20, 6.0, 1e-5, 6);
    CHECK(one.records.size() >= 2);
}

TEST_CASE("trajectory generation is deterministic and thread independent") {
    const TrajectoryDataset a = generate_trajectories(5, 40, 4, 6.0, 1e-5, 19);
    TrajectoryOptions opts;
    opts.threads = 3;
    const TrajectoryDataset b = generate_trajectories(5, 40, 4, 6.0, 1e-5, 19, opts);
    CHECK(encode_records(a.records) == encode_records(b.records));
    CHECK(a.manifest.lengths == b.manifest.lengths);

    TrajectoryOptions independent;
    independent.shared_matrix = false;
    const LpProblem p0 = family_problem(40, 4, 6.0, 19, false, 0);
    const LpProblem p1 = family_problem(40, 4, 6.0, 19, false, 1);
    CHECK_FALSE(p0.A == p1.A);
    CHECK(family_problem(40, 4, 6.0, 19, true, 0).A == family_problem(40, 4, 6.0, 19, true, 1).A);
    CHECK(generate_trajectories(2, 40, 4, 6.0, 1e-5, 19, independent).manifest.shared_matrix == false);
}

TEST_CASE("trajectory I/O round trip, slices and splits") {
    const TrajectoryDataset data = generate_trajectories(6, 40, 4, 6.0, 1e-5, 23);
    const auto dir = std::filesystem::temp_directory_path() / "algebraformer_test_traj";
    std::filesystem::remove_all(dir);
    write_trajectories(dir, data);
    const TrajectoryDataset back = read_trajectories(dir);
    CHECK(encode_records(back.records) == encode_records(data.records));
    CHECK(back.manifest.lengths == data.manifest.lengths);
    CHECK(back.manifest.format == kTrajectoryFormat);
    std::filesystem::remove_all(dir);
    CHECK(data.mean_length() > 0.0);

    const auto first = trajectory_slice(data, 0, 1);
    CHECK(first.size() == data.manifest.lengths[0]);
    const training::SupervisedSet set = make_supervised(first);
    CHECK(set.size() == first.size());
    CHECK(set.token_dim() == 2);
    CHECK(set.targets[0] == first[0].direction);

    const auto [tr, te] = split_trajectories(data, 0.5);
    CHECK(tr.size() + te.size() == data.records.size());
    CHECK_THROWS_AS(split_trajectories(data, 1.0), DataError);
    CHECK_THROWS_AS(decode_records("xyz"), FormatError);
}

TEST_CASE("model tags recover the problem family") {
    const TrajectoryDataset data = generate_trajectories(2, 40, 4, 6.0, 1e-5, 29);
    model::ModelWeights w = model::init_weights(model::desk_preset(2, 4), 1);
    tag_model(w, data.manifest);
    const TrajectoryManifest fam = family_from_model(w);
    CHECK(fam.m == 40);
    CHECK(fam.n == 4);
    CHECK(fam.p == 6.0);
    CHECK(fam.seed == 29);
    CHECK(fam.shared_matrix);
    CHECK(family_problem(fam, 3).b == family_problem(data.manifest, 3).b);
}
