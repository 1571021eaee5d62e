#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "algebraformer/linalg.hpp"
#include "algebraformer/model.hpp"
#include "algebraformer/rng.hpp"
#include "algebraformer/training.hpp"

namespace algebraformer::newton {

using linalg::DenseMatrix;
using linalg::Vector;

/// min over x of sum_i |(A x - b)_i|^p.
struct LpProblem {
    DenseMatrix A;
    Vector b;
    double p = 6.0;

    std::size_t m() const { return A.rows(); }
    std::size_t n() const { return A.cols(); }
    /// Throws DataError unless p > 1, m >= n >= 1 and dim(b) = m.
    void validate() const;
};

/// Residual floor inside the Hessian weights.
inline constexpr double kResidualFloor = 1e-8;

Vector residual(const LpProblem& prob, std::span<const double> x);
/// sum_i |r_i|^p
double objective(const LpProblem& prob, std::span<const double> x);
/// ||A x - b||_p, the quantity the decrement stop is measured on.
double lp_norm(const LpProblem& prob, std::span<const double> x);
/// p A^T (|r|^(p-1) sign(r))
Vector gradient(const LpProblem& prob, std::span<const double> x);
/// p (p-1) A^T diag(max(|r|, kResidualFloor)^(p-2)) A
DenseMatrix hessian(const LpProblem& prob, std::span<const double> x);

/// Entries U[0, 1), scaled to unit Frobenius norm.
DenseMatrix sample_matrix(std::size_t m, std::size_t n, Rng& rng);
/// Entries U[0, 1), scaled to unit Euclidean norm.
Vector sample_rhs(std::size_t m, Rng& rng);
/// A then b from one seeded stream.
LpProblem sample_problem(std::size_t m, std::size_t n, double p, std::uint64_t seed);

/// Solves H d = g with LU, adding lambda I (1e-10, x10 per retry) while
/// the factorization reports a singular pivot.
Vector newton_direction(const DenseMatrix& H, std::span<const double> g);

enum class StopCriterion { GradientNorm, ObjectiveDecrement };
enum class StopReason { GradientNorm, ObjectiveDecrement, Stationary, MaxIterExceeded };

std::string_view to_string(StopCriterion c);
std::string_view to_string(StopReason r);
StopCriterion parse_stop_criterion(std::string_view name);

struct NewtonOptions {
    double tol = 1e-5;
    std::size_t max_iter = 100;
    StopCriterion stop = StopCriterion::ObjectiveDecrement;
    /// Armijo backtracking (halving, c = 1e-4). Off by default.
    bool line_search = false;
};

struct NewtonTrajectory {
    std::vector<Vector> iterates;      ///< x_0 .. x_K
    std::vector<Vector> directions;    ///< d_0 .. d_{K-1}; x_{k+1} = x_k - t_k d_k
    std::vector<double> objectives;    ///< sum |r|^p at every iterate
    std::vector<double> gradient_norms;///< ||g|| at every iterate
    bool converged = false;
    StopReason stop_reason = StopReason::MaxIterExceeded;

    std::size_t iterations() const { return directions.size(); }
    const Vector& solution() const { return iterates.back(); }
    double final_objective() const { return objectives.back(); }
};

/// What a direction policy sees at iterate x_k.
struct NewtonState {
    const LpProblem& problem;
    const Vector& Atb;
    const Vector& x;
    const Vector& g;
};

using DirectionFn = std::function<Vector(const NewtonState&)>;

class DirectionProvider {
public:
    enum class Kind { ExactSolve, LearnedModel, Custom };

    /// Solves H(x_k) d = g(x_k).
    static DirectionProvider exact();
    /// Predicts d from the tokens [(A^T b)_i, x_i].
    static DirectionProvider learned(std::shared_ptr<const model::ModelWeights> weights);
    static DirectionProvider custom(std::string name, DirectionFn fn);

    Kind kind() const { return kind_; }
    const std::string& name() const { return name_; }
    /// Throws ShapeMismatch if the policy returns the wrong dimension.
    Vector operator()(const NewtonState& state) const;

private:
    DirectionProvider(Kind kind, std::string name, DirectionFn fn)
        : kind_(kind), name_(std::move(name)), fn_(std::move(fn)) {}

    Kind kind_;
    std::string name_;
    DirectionFn fn_;
};

struct TimingReport {
    std::vector<double> iteration_seconds;
    double total_seconds = 0.0;
    double first_direction_seconds = 0.0;  ///< latency of the first provider call
};

struct AcceleratedResult {
    NewtonTrajectory trajectory;
    TimingReport timing;
};

/// Newton iteration with a pluggable direction. Stops on the selected
/// criterion, on ||g_k|| <= 1e-12 ||g_0|| (Stationary), or at max_iter.
AcceleratedResult accelerated_newton(const LpProblem& prob, std::span<const double> x0,
                                     const DirectionProvider& provider, const NewtonOptions& options = {});

/// accelerated_newton with the exact direction.
NewtonTrajectory newton_solve(const LpProblem& prob, std::span<const double> x0,
                              const NewtonOptions& options = {});

// Trajectory datasets.

inline constexpr const char* kTrajectoryFormat = "lsd-v1-newton";

struct TrajectoryOptions {
    std::size_t max_iter = 100;
    /// All trajectories share one matrix A; only b varies.
    bool shared_matrix = true;
    unsigned threads = 1;
};

struct TrajectoryManifest {
    std::string format = kTrajectoryFormat;
    std::size_t m = 0;
    std::size_t n = 0;
    double p = 6.0;
    double tol = 1e-5;
    std::size_t count = 0;       ///< trajectories requested
    std::size_t converged = 0;   ///< trajectories kept
    std::uint64_t seed = 0;
    bool shared_matrix = true;
    std::size_t max_iter = 100;
    std::vector<std::size_t> lengths;      ///< recorded pairs per kept trajectory
    std::vector<std::size_t> problem_ids;  ///< problem index of each kept trajectory
};

struct TrajectoryRecord {
    Vector Atb;
    Vector x;
    Vector direction;
};

struct TrajectoryDataset {
    TrajectoryManifest manifest;
    std::vector<TrajectoryRecord> records;

    double mean_length() const;
};

/// Problem `index` of a trajectory family: the shared matrix comes from its
/// own seed slot, b from slot `index`.
LpProblem family_problem(std::size_t m, std::size_t n, double p, std::uint64_t seed, bool shared_matrix,
                         std::size_t index);
LpProblem family_problem(const TrajectoryManifest& manifest, std::size_t index);

/// Runs Newton from x_0 = 0 on problems 0..count-1 and records every
/// (state, direction) pair. Non-converged runs are skipped and counted.
TrajectoryDataset generate_trajectories(std::size_t count, std::size_t m, std::size_t n, double p, double tol,
                                        std::uint64_t seed, const TrajectoryOptions& options = {});

void write_trajectories(const std::filesystem::path& dir, const TrajectoryDataset& data);
TrajectoryDataset read_trajectories(const std::filesystem::path& dir);
std::string encode_records(const std::vector<TrajectoryRecord>& records);
std::vector<TrajectoryRecord> decode_records(std::string_view bytes);

/// Records of kept trajectories [first, last) as contiguous runs.
std::vector<TrajectoryRecord> trajectory_slice(const TrajectoryDataset& data, std::size_t first,
                                               std::size_t last);

/// Tokens [(A^T b)_i, x_i] with the direction as target.
training::SupervisedSet make_supervised(const std::vector<TrajectoryRecord>& records);

/// Train/test sets split by whole trajectory: the trailing
/// round(test_fraction * kept) trajectories form the test set.
std::pair<training::SupervisedSet, training::SupervisedSet> split_trajectories(const TrajectoryDataset& data,
                                                                               double test_fraction);

/// Metadata keys recorded on models trained from trajectories, so the
/// benchmark can rebuild the same problem family.
void tag_model(model::ModelWeights& weights, const TrajectoryManifest& manifest);
TrajectoryManifest family_from_model(const model::ModelWeights& weights);

} // namespace algebraformer::newton
