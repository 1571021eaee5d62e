#include <json.hpp>

#include "algebraformer/binary_io.hpp"
#include "algebraformer/bvp.hpp"
#include "algebraformer/errors.hpp"

namespace algebraformer::bvp {

using nlohmann::json;

namespace {

json manifest_to_json(const DatasetManifest& m) {
    return json{
        {"format", m.format},
        {"kind", std::string(to_string(m.kind))},
        {"count", m.count},
        {"n", m.dim},
        {"master_seed", m.master_seed},
        {"generator_version", m.generator_version},
        {"rejections", m.rejections},
        {"domain", {kDomainStart, kDomainEnd}},
        {"degree", degree_for_dimension(m.dim)},
        {"samplers",
         {{"K", "1 + alpha cos(2 pi omega x), alpha ~ U[0.25,0.75], omega ~ U[0.01,0.75]"},
          {"f", "(1 - alpha) + alpha r(x), alpha ~ U[0,1]"},
          {"r", "8 Fourier modes with U[-1,1]/k coefficients, shifted >= 0, unit node mean"},
          {"q", "1/3 on [3, 4.5], 0 elsewhere"},
          {"v", "constant, U[-2,2]"}}},
    };
}

DatasetManifest manifest_from_json(const json& j) {
    DatasetManifest m;
    try {
        m.format = j.at("format").get<std::string>();
        m.kind = parse_equation_kind(j.at("kind").get<std::string>());
        m.count = j.at("count").get<std::size_t>();
        m.dim = j.at("n").get<std::size_t>();
        m.master_seed = j.at("master_seed").get<std::uint64_t>();
        m.generator_version = j.at("generator_version").get<int>();
        m.rejections = j.at("rejections").get<std::size_t>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("dataset manifest: ") + e.what());
    }
    if (m.format != "lsd-v1") {
        throw FormatError("dataset manifest: unsupported format '" + m.format + "'");
    }
    return m;
}

} // namespace

std::string encode_samples(const std::vector<LinearSystemSample>& samples) {
    io::ByteWriter w;
    for (const auto& s : samples) {
        const std::size_t n = s.b.size();
        if (s.A.rows() != n || s.A.cols() != n || s.x.size() != n) {
            throw ShapeMismatch("encode_samples: inconsistent sample dimensions");
        }
        w.u32(static_cast<std::uint32_t>(n));
        w.f64s(s.A.data());
        w.f64s(s.b);
        w.f64s(s.x);
        w.f64(s.cond);
    }
    return std::move(w.bytes());
}

std::vector<LinearSystemSample> decode_samples(std::string_view bytes, EquationKind kind) {
    io::ByteReader r(bytes);
    std::vector<LinearSystemSample> out;
    while (!r.done()) {
        LinearSystemSample s;
        s.kind = kind;
        const std::size_t n = r.u32();
        if (n == 0 || r.remaining() < (n * n + 2 * n + 1) * sizeof(double)) {
            throw FormatError("samples.bin: truncated or corrupt record");
        }
        s.A = DenseMatrix(n, n);
        r.f64s(s.A.data());
        s.b.resize(n);
        r.f64s(s.b);
        s.x.resize(n);
        r.f64s(s.x);
        s.cond = r.f64();
        out.push_back(std::move(s));
    }
    return out;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
    std::filesystem::create_directories(dir);
    io::write_file(dir / "samples.bin", encode_samples(dataset.samples));
    io::write_file(dir / "manifest.json", manifest_to_json(dataset.manifest).dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
    Dataset d;
    json j;
    try {
        j = json::parse(io::read_file(dir / "manifest.json"));
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("dataset manifest: ") + e.what());
    }
    d.manifest = manifest_from_json(j);
    d.samples = decode_samples(io::read_file(dir / "samples.bin"), d.manifest.kind);
    if (d.samples.size() != d.manifest.count) {
        throw FormatError("dataset: manifest count does not match samples.bin");
    }
    for (const auto& s : d.samples) {
        if (s.b.size() != d.manifest.dim) {
            throw FormatError("dataset: record dimension differs from manifest");
        }
    }
    return d;
}

} // namespace algebraformer::bvp
