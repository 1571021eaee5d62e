#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "algebraformer/bvp.hpp"
#include "algebraformer/model.hpp"
#include "cli.hpp"

namespace fs = std::filesystem;
using namespace algebraformer;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t count_lines(const std::string& s) {
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

class TempDir {
public:
    TempDir() : path_(fs::temp_directory_path() / ("algebraformer_cli_" + std::to_string(::getpid()))) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

} // namespace

TEST_CASE("usage errors") {
    CHECK(run({}).code == cli::kUsage);
    CHECK(run({"no-such-command"}).code == cli::kUsage);
    CHECK(run({"gen-bvp", "--kind", "diffusion", "--count", "1"}).code == cli::kUsage);
    CHECK(run({"gen-bvp", "--kind", "heat", "--count", "1", "--dim", "4", "--out", "x"}).code == cli::kUsage);
    CHECK(run({"--help"}).code == cli::kOk);
}

TEST_CASE("gen-bvp is deterministic and reruns from its config") {
    TempDir tmp;
    const std::string a = (tmp / "a").string();
    const std::string b = (tmp / "b").string();
    REQUIRE(run({"gen-bvp", "--kind", "reaction", "--count", "6", "--dim", "8", "--seed", "4", "--out", a}).code ==
            cli::kOk);
    REQUIRE(run({"gen-bvp", "--kind", "reaction", "--count", "6", "--dim", "8", "--seed", "4", "--out", b}).code ==
            cli::kOk);
    CHECK(slurp(tmp / "a/samples.bin") == slurp(tmp / "b/samples.bin"));
    CHECK(bvp::read_dataset(a).samples.size() == 6);

    const auto cfg = nlohmann::json::parse(slurp(tmp / "a/config.json"));
    CHECK(cfg.at("count") == 6);
    CHECK(cfg.at("kind") == "reaction");

    const std::string c = (tmp / "c").string();
    REQUIRE(run({"gen-bvp", "--config", (tmp / "a/config.json").string(), "--out", c}).code == cli::kOk);
    CHECK(slurp(tmp / "c/samples.bin") == slurp(tmp / "a/samples.bin"));
}

TEST_CASE("gen-bvp edge cases") {
    TempDir tmp;
    const Result empty = run({"gen-bvp", "--kind", "diffusion", "--count", "0", "--dim", "8", "--out", (tmp / "e").string()});
    CHECK(empty.code == cli::kOk);
    CHECK(bvp::read_dataset(tmp / "e").samples.empty());
    CHECK(run({"gen-bvp", "--kind", "diffusion", "--count", "2", "--dim", "2", "--out", (tmp / "d").string()}).code == cli::kDataError);
}

TEST_CASE("config files: flags win, unknown keys fail, env seed fills in") {
    TempDir tmp;
    {
        std::ofstream f(tmp / "cfg.json");
        f << R"({"kind": "advection", "count": 3, "dim": 5, "seed": 11})";
    }
    REQUIRE(run({"gen-bvp", "--config", (tmp / "cfg.json").string(), "--count", "2", "--out", (tmp / "o").string()})
                .code == cli::kOk);
    const auto cfg = nlohmann::json::parse(slurp(tmp / "o/config.json"));
    CHECK(cfg.at("count") == 2);
    CHECK(cfg.at("seed") == 11);
    CHECK(cfg.at("kind") == "advection");

    {
        std::ofstream f(tmp / "bad.json");
        f << R"({"bogus": 1})";
    }
    CHECK(run({"gen-bvp", "--kind", "diffusion", "--config", (tmp / "bad.json").string(), "--count", "1", "--dim", "4", "--out",
               (tmp / "p").string()})
              .code == cli::kUsage);

    ::setenv("ALGEBRAFORMER_SEED", "77", 1);
    REQUIRE(run({"gen-bvp", "--kind", "diffusion", "--count", "1", "--dim", "4", "--out", (tmp / "env").string()}).code == cli::kOk);
    REQUIRE(run({"gen-bvp", "--kind", "diffusion", "--count", "1", "--dim", "4", "--seed", "5", "--out", (tmp / "flag").string()}).code ==
            cli::kOk);
    ::unsetenv("ALGEBRAFORMER_SEED");
    CHECK(nlohmann::json::parse(slurp(tmp / "env/config.json")).at("seed") == 77);
    CHECK(nlohmann::json::parse(slurp(tmp / "flag/config.json")).at("seed") == 5);
}

TEST_CASE("train, fine-tune and bench-noise") {
    TempDir tmp;
    REQUIRE(run({"gen-bvp", "--kind", "diffusion", "--count", "20", "--dim", "4", "--seed", "1", "--out", (tmp / "d").string()}).code ==
            cli::kOk);

    REQUIRE(run({"train", "--data", (tmp / "d").string(), "--epochs", "0", "--seed", "2", "--out",
                 (tmp / "t0").string()})
                .code == cli::kOk);
    REQUIRE(run({"train", "--data", (tmp / "d").string(), "--epochs", "0", "--seed", "2", "--batch-size", "3",
                 "--out", (tmp / "t0b").string()})
                .code == cli::kOk);
    CHECK(slurp(tmp / "t0/model.weights") == slurp(tmp / "t0b/model.weights"));
    CHECK(model::load_weights(tmp / "t0/model.weights").config().preset == "desk");
    CHECK(count_lines(slurp(tmp / "t0/metrics.csv")) == 1);

    REQUIRE(run({"train", "--data", (tmp / "d").string(), "--epochs", "2", "--seed", "2", "--batch-size", "4",
                 "--out", (tmp / "t2").string()})
                .code == cli::kOk);
    CHECK(count_lines(slurp(tmp / "t2/metrics.csv")) == 3);
    REQUIRE(run({"train", "--data", (tmp / "d").string(), "--epochs", "2", "--seed", "2", "--batch-size", "4",
                 "--out", (tmp / "t2b").string()})
                .code == cli::kOk);
    CHECK(slurp(tmp / "t2/model.weights") == slurp(tmp / "t2b/model.weights"));

    REQUIRE(run({"fine-tune", "--from", (tmp / "t2/model.weights").string(), "--data", (tmp / "d").string(),
                 "--epochs", "1", "--out", (tmp / "ft").string()})
                .code == cli::kOk);
    CHECK(count_lines(slurp(tmp / "ft/metrics.csv")) == 2);

    REQUIRE(run({"gen-bvp", "--kind", "diffusion", "--count", "4", "--dim", "6", "--out", (tmp / "d6").string()}).code == cli::kOk);
    CHECK(run({"fine-tune", "--from", (tmp / "t2/model.weights").string(), "--data", (tmp / "d6").string(),
               "--epochs", "1", "--out", (tmp / "ft6").string()})
              .code == cli::kDataError);

    const Result bench = run({"bench-noise", "--model", (tmp / "t2/model.weights").string(), "--data",
                              (tmp / "d").string(), "--levels", "0,1e-3", "--out", (tmp / "noise.csv").string()});
    REQUIRE(bench.code == cli::kOk);
    CHECK(count_lines(slurp(tmp / "noise.csv")) == 3);
    CHECK(fs::exists(tmp / "noise.config.json"));

    CHECK(run({"train", "--data", (tmp / "missing").string(), "--out", (tmp / "x").string()}).code ==
          cli::kDataError);
}

TEST_CASE("gen-newton and bench-newton") {
    TempDir tmp;
    const Result gen = run({"gen-newton", "--count", "12", "--m", "30", "--n", "4", "--seed", "3", "--out",
                            (tmp / "traj").string()});
    REQUIRE(gen.code == cli::kOk);
    REQUIRE(run({"train", "--data", (tmp / "traj").string(), "--epochs", "1", "--out", (tmp / "nm").string()})
                .code == cli::kOk);
    const Result bench = run({"bench-newton", "--model", (tmp / "nm/model.weights").string(), "--trials", "3",
                              "--out", (tmp / "newton.csv").string()});
    REQUIRE(bench.code == cli::kOk);
    CHECK(count_lines(slurp(tmp / "newton.csv")) == 1 + 2 * 3);
    CHECK(fs::exists(tmp / "newton.latency.json"));
    CHECK(run({"bench-newton", "--model", (tmp / "nm/model.weights").string(), "--m", "31", "--out",
               (tmp / "bad.csv").string()})
              .code == cli::kDataError);
}

TEST_CASE("gradcheck subcommand") {
    CHECK(run({"gradcheck", "--op", "gelu"}).code == cli::kOk);
    CHECK(run({"gradcheck", "--op", "gelu", "--inject-gelu-fault"}).code == cli::kNumericalFailure);
    CHECK(run({"gradcheck", "--op", "not_an_op"}).code == cli::kUsage);
}
