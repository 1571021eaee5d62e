#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "algebraformer/chebyshev.hpp"
#include "algebraformer/linalg.hpp"
#include "algebraformer/rng.hpp"

namespace algebraformer::bvp {

using linalg::DenseMatrix;
using linalg::Vector;

enum class EquationKind { Diffusion, ReactionDiffusion, AdvectionDiffusion };

std::string_view to_string(EquationKind kind);
/// Accepts the long names and the CLI short forms diffusion|reaction|advection.
EquationKind parse_equation_kind(std::string_view name);

inline constexpr double kDomainStart = 0.0;
inline constexpr double kDomainEnd = 7.5;
inline constexpr double kReactionStart = 3.0;
inline constexpr double kReactionEnd = 4.5;
inline constexpr double kReactionValue = 1.0 / 3.0;
inline constexpr int kFourierModes = 8;
inline constexpr int kGeneratorVersion = 1;

/// Spectral discretization with nodes in ascending physical order.
struct Discretization {
    std::size_t N = 0;       ///< polynomial degree; N+1 nodes, N-1 interior unknowns
    double a = kDomainStart;
    double b = kDomainEnd;
    Vector nodes;            ///< ascending, nodes.front() = a, nodes.back() = b
    DenseMatrix D;           ///< first-derivative matrix in the same ordering

    std::size_t interior_size() const { return N - 1; }
};

/// Builds the Chebyshev discretization of degree N on [a, b] and re-indexes
/// it from the descending reference order to ascending physical order.
Discretization make_discretization(std::size_t N, double a = kDomainStart, double b = kDomainEnd);

/// Degree whose interior system has exactly `dim` unknowns.
inline std::size_t degree_for_dimension(std::size_t dim) { return dim + 1; }

struct KSample {
    double alpha = 0.0;
    double omega = 0.0;
    Vector values;
};

struct FSample {
    double alpha = 0.0;
    Vector r_field;
    Vector values;
};

/// K(x) = 1 + alpha cos(2 pi omega x), alpha ~ U[0.25, 0.75], omega ~ U[0.01, 0.75].
KSample sample_K(Rng& rng, const Discretization& disc);
Vector evaluate_K(double alpha, double omega, std::span<const double> nodes);

/// f = (1 - alpha) + alpha r(x), alpha ~ U[0, 1], r a smooth random field with
/// unit arithmetic mean over the nodes.
FSample sample_f(Rng& rng, const Discretization& disc);

/// Random field from kFourierModes Fourier modes, shifted to be nonnegative
/// and scaled to unit mean over the nodes.
Vector random_field(Rng& rng, std::span<const double> nodes, double length);

/// 1/3 on nodes inside [3, 4.5], 0 elsewhere.
Vector reaction_coefficient(std::span<const double> nodes);

struct CoefficientSample {
    double alpha_K = 0.0;
    double omega = 0.0;
    double alpha_f = 0.0;
    Vector K_values;
    Vector r_field;
    Vector f_values;
    Vector q_values;
    double v_alpha = 0.0;
};

/// Draws every coefficient in a fixed order so that one seed gives the same
/// K and f for all equation kinds.
CoefficientSample sample_coefficients(Rng& rng, const Discretization& disc);

/// Full-grid operator -D diag(K) D (+ diag(q)) (+ D diag(v)), restricted to
/// interior nodes (homogeneous Dirichlet conditions).
DenseMatrix assemble_operator(EquationKind kind, const CoefficientSample& coeffs,
                              const Discretization& disc);

/// Entries of `full` at the interior nodes 1..N-1.
Vector interior(std::span<const double> full);

struct LinearSystemSample {
    DenseMatrix A;
    Vector b;
    Vector x;
    double cond = 0.0;
    EquationKind kind = EquationKind::Diffusion;
    std::uint64_t seed = 0;
};

struct DatasetManifest {
    std::string format = "lsd-v1";
    EquationKind kind = EquationKind::Diffusion;
    std::size_t count = 0;
    std::size_t dim = 0;
    std::uint64_t master_seed = 0;
    int generator_version = kGeneratorVersion;
    std::size_t rejections = 0;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<LinearSystemSample> samples;

    std::size_t dim() const { return manifest.dim; }
};

struct GenerateOptions {
    unsigned threads = 1;
    bool compute_condition = true;
    double max_solution_magnitude = 1e6;
};

/// Emits `count` labeled systems of dimension `dim` (degree dim+1). Each slot
/// draws from its own seed stream, so output does not depend on `threads`.
/// Throws DatasetError when more than 10% of attempts are rejected.
Dataset generate_dataset(EquationKind kind, std::size_t count, std::size_t dim,
                         std::uint64_t seed, const GenerateOptions& options = {});

/// b + level ||b|| g / ||g|| with g standard Gaussian.
Vector add_noise(std::span<const double> b, double level, Rng& rng);

/// Median of a nonempty set of values.
double median(std::vector<double> values);

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

/// Serialized samples.bin payload.
std::string encode_samples(const std::vector<LinearSystemSample>& samples);
std::vector<LinearSystemSample> decode_samples(std::string_view bytes, EquationKind kind);

} // namespace algebraformer::bvp
