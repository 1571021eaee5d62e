#include <atomic>
#include <cmath>
#include <numeric>
#include <optional>
#include <thread>

#include <json.hpp>

#include "algebraformer/binary_io.hpp"
#include "algebraformer/errors.hpp"
#include "algebraformer/newton.hpp"

namespace algebraformer::newton {

using nlohmann::json;

namespace {

constexpr std::uint64_t kMatrixSlot = 0xA11A11A1ULL;

json manifest_to_json(const TrajectoryManifest& m) {
    return json{
        {"format", m.format},
        {"m", m.m},
        {"n", m.n},
        {"p", m.p},
        {"tol", m.tol},
        {"count", m.count},
        {"converged", m.converged},
        {"seed", m.seed},
        {"shared_matrix", m.shared_matrix},
        {"max_iter", m.max_iter},
        {"x0", "zeros"},
        {"stop", "objective-decrement on ||Ax-b||_p"},
        {"lengths", m.lengths},
        {"problem_ids", m.problem_ids},
        {"record_count", std::accumulate(m.lengths.begin(), m.lengths.end(), std::size_t{0})},
    };
}

TrajectoryManifest manifest_from_json(const json& j) {
    TrajectoryManifest m;
    try {
        m.format = j.at("format").get<std::string>();
        m.m = j.at("m").get<std::size_t>();
        m.n = j.at("n").get<std::size_t>();
        m.p = j.at("p").get<double>();
        m.tol = j.at("tol").get<double>();
        m.count = j.at("count").get<std::size_t>();
        m.converged = j.at("converged").get<std::size_t>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.shared_matrix = j.at("shared_matrix").get<bool>();
        m.max_iter = j.at("max_iter").get<std::size_t>();
        m.lengths = j.at("lengths").get<std::vector<std::size_t>>();
        m.problem_ids = j.at("problem_ids").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("trajectory manifest: ") + e.what());
    }
    if (m.format != kTrajectoryFormat) {
        throw FormatError("trajectory manifest: unsupported format '" + m.format + "'");
    }
    if (m.lengths.size() != m.converged || m.problem_ids.size() != m.converged) {
        throw FormatError("trajectory manifest: per-trajectory tables disagree with the converged count");
    }
    return m;
}

} // namespace

double TrajectoryDataset::mean_length() const {
    if (manifest.lengths.empty()) {
        return 0.0;
    }
    return static_cast<double>(records.size()) / static_cast<double>(manifest.lengths.size());
}

LpProblem family_problem(std::size_t m, std::size_t n, double p, std::uint64_t seed, bool shared_matrix,
                         std::size_t index) {
    if (!shared_matrix) {
        return sample_problem(m, n, p, derive_seed(seed, index));
    }
    if (n == 0 || m < n) {
        throw DataError("family_problem: need m >= n >= 1");
    }
    Rng matrix_rng(derive_seed(seed, kMatrixSlot));
    Rng rhs_rng(derive_seed(seed, index));
    LpProblem prob;
    prob.A = sample_matrix(m, n, matrix_rng);
    prob.b = sample_rhs(m, rhs_rng);
    prob.p = p;
    prob.validate();
    return prob;
}

LpProblem family_problem(const TrajectoryManifest& manifest, std::size_t index) {
    return family_problem(manifest.m, manifest.n, manifest.p, manifest.seed, manifest.shared_matrix, index);
}

TrajectoryDataset generate_trajectories(std::size_t count, std::size_t m, std::size_t n, double p, double tol,
                                        std::uint64_t seed, const TrajectoryOptions& options) {
    if (n == 0 || m < n) {
        throw DataError("generate_trajectories: need m >= n >= 1");
    }
    if (!(p > 1.0) || !(tol > 0.0)) {
        throw DataError("generate_trajectories: need p > 1 and tol > 0");
    }
    TrajectoryDataset out;
    out.manifest.m = m;
    out.manifest.n = n;
    out.manifest.p = p;
    out.manifest.tol = tol;
    out.manifest.count = count;
    out.manifest.seed = seed;
    out.manifest.shared_matrix = options.shared_matrix;
    out.manifest.max_iter = options.max_iter;

    NewtonOptions newton_opts;
    newton_opts.tol = tol;
    newton_opts.max_iter = options.max_iter;

    std::vector<std::optional<std::vector<TrajectoryRecord>>> slots(count);
    auto fill = [&](std::size_t i) {
        const LpProblem prob = family_problem(m, n, p, seed, options.shared_matrix, i);
        const Vector x0(n, 0.0);
        const NewtonTrajectory tr = newton_solve(prob, x0, newton_opts);
        if (!tr.converged) {
            return;
        }
        const Vector Atb = linalg::matvec_transposed(prob.A, prob.b);
        std::vector<TrajectoryRecord> recs;
        for (std::size_t k = 0; k < tr.iterations(); ++k) {
            recs.push_back({Atb, tr.iterates[k], tr.directions[k]});
        }
        slots[i] = std::move(recs);
    };
    const unsigned threads = std::max(1U, options.threads);
    if (threads == 1 || count < 2) {
        for (std::size_t i = 0; i < count; ++i) {
            fill(i);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) {
                    fill(i);
                }
            });
        }
    }
    for (std::size_t i = 0; i < count; ++i) {
        if (!slots[i]) {
            continue;
        }
        out.manifest.lengths.push_back(slots[i]->size());
        out.manifest.problem_ids.push_back(i);
        for (auto& r : *slots[i]) {
            out.records.push_back(std::move(r));
        }
    }
    out.manifest.converged = out.manifest.lengths.size();
    return out;
}

std::string encode_records(const std::vector<TrajectoryRecord>& records) {
    io::ByteWriter w;
    for (const auto& r : records) {
        const std::size_t n = r.x.size();
        if (r.Atb.size() != n || r.direction.size() != n) {
            throw ShapeMismatch("encode_records: inconsistent record dimensions");
        }
        w.u32(static_cast<std::uint32_t>(n));
        w.f64s(r.Atb);
        w.f64s(r.x);
        w.f64s(r.direction);
    }
    return std::move(w.bytes());
}

std::vector<TrajectoryRecord> decode_records(std::string_view bytes) {
    io::ByteReader r(bytes);
    std::vector<TrajectoryRecord> out;
    while (!r.done()) {
        const std::size_t n = r.u32();
        if (n == 0 || r.remaining() < 3 * n * sizeof(double)) {
            throw FormatError("samples.bin: truncated or corrupt trajectory record");
        }
        TrajectoryRecord rec{Vector(n), Vector(n), Vector(n)};
        r.f64s(rec.Atb);
        r.f64s(rec.x);
        r.f64s(rec.direction);
        out.push_back(std::move(rec));
    }
    return out;
}

void write_trajectories(const std::filesystem::path& dir, const TrajectoryDataset& data) {
    io::write_file(dir / "manifest.json", manifest_to_json(data.manifest).dump(2) + "\n");
    io::write_file(dir / "samples.bin", encode_records(data.records));
}

TrajectoryDataset read_trajectories(const std::filesystem::path& dir) {
    TrajectoryDataset data;
    json j;
    try {
        j = json::parse(io::read_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw FormatError(std::string("trajectory manifest: ") + e.what());
    }
    data.manifest = manifest_from_json(j);
    data.records = decode_records(io::read_file(dir / "samples.bin"));
    const std::size_t expected =
        std::accumulate(data.manifest.lengths.begin(), data.manifest.lengths.end(), std::size_t{0});
    if (data.records.size() != expected) {
        throw FormatError("trajectory dataset: record count differs from the manifest");
    }
    for (const auto& r : data.records) {
        if (r.x.size() != data.manifest.n) {
            throw FormatError("trajectory dataset: record dimension differs from the manifest");
        }
    }
    return data;
}

std::vector<TrajectoryRecord> trajectory_slice(const TrajectoryDataset& data, std::size_t first,
                                               std::size_t last) {
    const auto& lengths = data.manifest.lengths;
    if (first > last || last > lengths.size()) {
        throw DataError("trajectory_slice: range out of bounds");
    }
    const std::size_t begin = std::accumulate(lengths.begin(), lengths.begin() + static_cast<std::ptrdiff_t>(first),
                                              std::size_t{0});
    const std::size_t end = std::accumulate(lengths.begin(), lengths.begin() + static_cast<std::ptrdiff_t>(last),
                                            std::size_t{0});
    return {data.records.begin() + static_cast<std::ptrdiff_t>(begin),
            data.records.begin() + static_cast<std::ptrdiff_t>(end)};
}

training::SupervisedSet make_supervised(const std::vector<TrajectoryRecord>& records) {
    training::SupervisedSet set;
    set.inputs.reserve(records.size());
    set.targets.reserve(records.size());
    for (const auto& r : records) {
        set.inputs.push_back(model::encode_newton_state(r.Atb, r.x));
        set.targets.push_back(r.direction);
    }
    return set;
}

std::pair<training::SupervisedSet, training::SupervisedSet> split_trajectories(const TrajectoryDataset& data,
                                                                               double test_fraction) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
        throw DataError("split_trajectories: test fraction must lie in [0, 1)");
    }
    const std::size_t kept = data.manifest.lengths.size();
    const auto n_test = static_cast<std::size_t>(std::round(test_fraction * static_cast<double>(kept)));
    return {make_supervised(trajectory_slice(data, 0, kept - n_test)),
            make_supervised(trajectory_slice(data, kept - n_test, kept))};
}

void tag_model(model::ModelWeights& weights, const TrajectoryManifest& manifest) {
    auto& md = weights.metadata();
    md["newton.m"] = std::to_string(manifest.m);
    md["newton.n"] = std::to_string(manifest.n);
    md["newton.p"] = json(manifest.p).dump();
    md["newton.tol"] = json(manifest.tol).dump();
    md["newton.seed"] = std::to_string(manifest.seed);
    md["newton.shared_matrix"] = manifest.shared_matrix ? "true" : "false";
    md["newton.count"] = std::to_string(manifest.count);
}

TrajectoryManifest family_from_model(const model::ModelWeights& weights) {
    const auto& md = weights.metadata();
    auto get = [&](const char* key) -> const std::string& {
        const auto it = md.find(key);
        if (it == md.end()) {
            throw DataError(std::string("model carries no Newton problem metadata (missing ") + key + ")");
        }
        return it->second;
    };
    TrajectoryManifest m;
    try {
        m.m = std::stoull(get("newton.m"));
        m.n = std::stoull(get("newton.n"));
        m.p = std::stod(get("newton.p"));
        m.tol = std::stod(get("newton.tol"));
        m.seed = std::stoull(get("newton.seed"));
        m.shared_matrix = get("newton.shared_matrix") == "true";
        m.count = std::stoull(get("newton.count"));
    } catch (const std::logic_error& e) {
        throw FormatError(std::string("model Newton metadata: ") + e.what());
    }
    return m;
}

} // namespace algebraformer::newton
