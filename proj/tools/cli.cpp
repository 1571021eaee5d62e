#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

#include <CLI11.hpp>
#include <json.hpp>

#include "algebraformer/binary_io.hpp"
#include "algebraformer/bvp.hpp"
#include "algebraformer/errors.hpp"
#include "algebraformer/gradcheck.hpp"
#include "algebraformer/model.hpp"
#include "algebraformer/newton.hpp"
#include "algebraformer/training.hpp"

namespace algebraformer::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

constexpr const char* kSeedEnv = "ALGEBRAFORMER_SEED";
constexpr const char* kDefaultLevels = "1e-4,1e-3,1e-2,1e-1";

std::string sci(double v, int digits = 4) {
    std::ostringstream s;
    s << std::scientific << std::setprecision(digits) << v;
    return s.str();
}

std::string fixed(double v, int digits = 2) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

// Config files and the resolved record.

json option_value(const std::string& text) {
    try {
        json v = json::parse(text);
        if (v.is_number()) {
            return v;
        }
    } catch (const json::exception&) {
    }
    return text;
}

/// Every visible option of `sub` with its effective value.
json resolved_config(const CLI::App& sub) {
    json j;
    j["command"] = sub.get_name();
    for (const CLI::Option* opt : sub.get_options()) {
        const std::string name = opt->get_single_name();
        if (name == "help" || name == "config" || opt->get_group().empty()) {
            continue;
        }
        if (opt->get_expected_min() == 0) {
            j[name] = opt->count() > 0;
            continue;
        }
        const auto& results = opt->results();
        const std::string text = results.empty() ? opt->get_default_str() : results.back();
        if (!text.empty()) {
            j[name] = option_value(text);
        }
    }
    return j;
}

void write_config(const fs::path& path, const CLI::App& sub) {
    io::write_file(path, resolved_config(sub).dump(2) + "\n");
}

/// "--name" or "--name=value" -> "name".
std::string long_name(const std::string& token) {
    if (token.size() < 3 || token.compare(0, 2, "--") != 0) {
        return {};
    }
    return token.substr(2, token.find('=') - 2);
}

/// Adds config-file values and the seed fallback for every option the
/// command line leaves unset.
std::vector<std::string> expand_args(const CLI::App& app, std::vector<std::string> args) {
    if (args.empty()) {
        return args;
    }
    const CLI::App* sub = nullptr;
    try {
        sub = app.get_subcommand(args.front());
    } catch (const CLI::OptionNotFound&) {
        return args;
    }

    std::set<std::string> given;
    std::optional<std::string> config_path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        const std::string name = long_name(args[i]);
        if (name.empty()) {
            continue;
        }
        given.insert(name);
        if (name == "config") {
            const auto eq = args[i].find('=');
            if (eq != std::string::npos) {
                config_path = args[i].substr(eq + 1);
            } else if (i + 1 < args.size()) {
                config_path = args[i + 1];
            }
        }
    }

    std::vector<std::string> extra;
    if (config_path) {
        json j;
        try {
            j = json::parse(io::read_file(*config_path));
        } catch (const json::exception& e) {
            throw UsageError("config file " + *config_path + ": " + e.what());
        }
        if (!j.is_object()) {
            throw UsageError("config file " + *config_path + " must hold a JSON object");
        }
        for (const auto& [key, value] : j.items()) {
            if (key == "command") {
                if (value != sub->get_name()) {
                    throw UsageError("config file " + *config_path + " is for '" + value.dump() + "', not '" +
                                     sub->get_name() + "'");
                }
                continue;
            }
            if (key == "config" || key == "help" || sub->get_option_no_throw("--" + key) == nullptr) {
                throw UsageError("config file " + *config_path + ": unknown option '" + key + "' for " +
                                 sub->get_name());
            }
            if (given.count(key) > 0 || value.is_null()) {
                continue;
            }
            given.insert(key);
            if (value.is_boolean()) {
                if (value.get<bool>()) {
                    extra.push_back("--" + key);
                }
                continue;
            }
            extra.push_back("--" + key);
            extra.push_back(value.is_string() ? value.get<std::string>() : value.dump());
        }
    }

    if (sub->get_option_no_throw("--seed") != nullptr && given.count("seed") == 0) {
        if (const char* env = std::getenv(kSeedEnv); env != nullptr && *env != '\0') {
            extra.push_back("--seed");
            extra.push_back(env);
        }
    }
    args.insert(args.begin() + 1, extra.begin(), extra.end());
    return args;
}

// Shared data handling.

std::string dataset_format(const fs::path& dir) {
    json j;
    try {
        j = json::parse(io::read_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw FormatError((dir / "manifest.json").string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("format") || !j["format"].is_string()) {
        throw FormatError((dir / "manifest.json").string() + " has no format field");
    }
    return j["format"].get<std::string>();
}

struct TrainingData {
    training::SupervisedSet train;
    training::SupervisedSet test;
    std::size_t token_dim = 0;
    std::size_t max_tokens = 0;
    std::optional<newton::TrajectoryManifest> family;
};

TrainingData load_training_data(const fs::path& dir, double test_fraction) {
    TrainingData d;
    if (dataset_format(dir) == newton::kTrajectoryFormat) {
        const newton::TrajectoryDataset data = newton::read_trajectories(dir);
        std::tie(d.train, d.test) = newton::split_trajectories(data, test_fraction);
        d.token_dim = 2;
        d.max_tokens = data.manifest.n;
        d.family = data.manifest;
    } else {
        const bvp::Dataset ds = bvp::read_dataset(dir);
        std::tie(d.train, d.test) = training::split(training::make_supervised(ds), test_fraction);
        d.token_dim = ds.dim() + 1;
        d.max_tokens = ds.dim();
    }
    if (d.train.empty()) {
        throw DatasetError("no training samples in " + dir.string());
    }
    return d;
}

void check_model_fits(const model::ModelConfig& config, std::size_t token_dim, std::size_t tokens) {
    if (config.token_dim != token_dim || config.max_tokens < tokens) {
        throw ShapeMismatch("model takes " + std::to_string(config.token_dim) + "-wide tokens (at most " +
                            std::to_string(config.max_tokens) + "), data has " + std::to_string(tokens) +
                            " tokens of width " + std::to_string(token_dim));
    }
}

/// Batch size and cosine range per preset. The desk model needs the larger
/// learning rate to reach the label scale within a desk-length run.
training::TrainConfig preset_schedule(const std::string& preset) {
    training::TrainConfig tc;
    if (preset == "desk") {
        tc.batch_size = 64;
        tc.lr_max = 1e-3;
        tc.lr_min = 1e-4;
    }
    return tc;
}

training::EpochCallback progress(std::ostream& out, std::size_t epochs) {
    return [&out, epochs](const training::EpochMetrics& m) {
        out << "epoch " << m.epoch << "/" << epochs << "  loss " << sci(m.train_loss) << "  test_mse "
            << sci(m.test_mse) << "  test_rel_mse " << sci(m.test_rel_mse) << "  lr " << sci(m.lr, 2) << "  "
            << fixed(m.seconds) << "s\n"
            << std::flush;
    };
}

void finish_training(std::ostream& out, const fs::path& dir, const training::TrainResult& result,
                     const TrainingData& data) {
    model::save_weights(dir / "model.weights", result.weights);
    result.log.write_csv(dir / "metrics.csv");
    json summary{
        {"parameter_count", result.weights.parameter_count()},
        {"train_samples", data.train.size()},
        {"test_samples", data.test.size()},
        {"epochs", result.log.rows.size()},
    };
    if (!data.test.empty()) {
        const training::Evaluation ev = training::evaluate(result.weights, data.test);
        const training::Evaluation base = training::mean_predictor_baseline(data.train, data.test);
        summary["test_mse"] = ev.mse;
        summary["test_rel_mse"] = ev.rel_mse;
        summary["baseline_test_mse"] = base.mse;
        summary["baseline_test_rel_mse"] = base.rel_mse;
        out << "test mse " << sci(ev.mse) << " (mean predictor " << sci(base.mse) << ", ratio "
            << fixed(ev.mse / base.mse, 4) << "), median relative mse " << sci(ev.rel_mse) << "\n";
    }
    io::write_file(dir / "summary.json", summary.dump(2) + "\n");
    out << "wrote " << (dir / "model.weights").string() << "\n";
}

std::vector<double> parse_levels(const std::string& text) {
    std::vector<double> levels;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::logic_error&) {
            used = 0;
        }
        if (used == 0 || used != item.size() || !(v >= 0.0)) {
            throw UsageError("--levels: '" + item + "' is not a nonnegative number");
        }
        levels.push_back(v);
    }
    if (levels.empty()) {
        throw UsageError("--levels: no levels given");
    }
    return levels;
}

fs::path sidecar(const fs::path& csv, const std::string& suffix) {
    fs::path p = csv;
    return p.replace_extension(suffix);
}

double median_of(std::vector<double> v) { return v.empty() ? 0.0 : bvp::median(std::move(v)); }

// Subcommands.

struct Common {
    std::string config;
    unsigned threads = 1;

    void add(CLI::App& sub) {
        sub.add_option("--config", config, "JSON object of option values; command-line flags take precedence");
        sub.add_option("--threads", threads, "Worker threads (1 gives the serial reference order)")
            ->check(CLI::PositiveNumber);
    }
};

struct GenBvp {
    std::string kind;
    std::size_t count = 0;
    std::size_t dim = 0;
    std::uint64_t seed = 0;
    std::string out;

    void add(CLI::App& sub) {
        sub.add_option("--kind", kind, "Equation kind")
            ->required()
            ->check(CLI::IsMember({"diffusion", "reaction", "advection"}));
        sub.add_option("--count", count, "Number of systems")->required();
        sub.add_option("--dim", dim, "System dimension (interior unknowns)")->required();
        sub.add_option("--seed", seed, "Master seed");
        sub.add_option("--out", out, "Output directory")->required();
    }

    int run(const CLI::App& sub, const Common& common, std::ostream& os) const {
        if (dim < 4) {
            throw DataError("--dim must be at least 4");
        }
        bvp::GenerateOptions options;
        options.threads = common.threads;
        const bvp::Dataset ds = bvp::generate_dataset(bvp::parse_equation_kind(kind), count, dim, seed, options);
        bvp::write_dataset(out, ds);
        write_config(fs::path(out) / "config.json", sub);
        os << "wrote " << ds.samples.size() << " " << kind << " systems of dimension " << dim << " to " << out
           << " (" << ds.manifest.rejections << " rejected)\n";
        if (ds.samples.empty()) {
            os << "median condition number: n/a\n";
        } else {
            std::vector<double> conds;
            for (const auto& s : ds.samples) {
                conds.push_back(s.cond);
            }
            os << "median condition number: " << sci(bvp::median(std::move(conds))) << "\n";
        }
        return kOk;
    }
};

struct GenNewton {
    std::size_t count = 0;
    std::size_t m = 0;
    std::size_t n = 0;
    double p = 6.0;
    double tol = 1e-5;
    std::uint64_t seed = 0;
    std::size_t max_iter = 100;
    bool independent = false;
    std::string out;

    void add(CLI::App& sub) {
        sub.add_option("--count", count, "Number of trajectories")->required();
        sub.add_option("--m", m, "Rows of A")->required();
        sub.add_option("--n", n, "Columns of A")->required();
        sub.add_option("--p", p, "Exponent of the residual norm");
        sub.add_option("--tol", tol, "Stop when ||Ax-b||_p changes by less than this");
        sub.add_option("--seed", seed, "Master seed");
        sub.add_option("--max-iter", max_iter, "Newton iteration cap");
        sub.add_flag("--independent-matrices", independent, "Draw a fresh A per trajectory");
        sub.add_option("--out", out, "Output directory")->required();
    }

    int run(const CLI::App& sub, const Common& common, std::ostream& os) const {
        newton::TrajectoryOptions options;
        options.max_iter = max_iter;
        options.shared_matrix = !independent;
        options.threads = common.threads;
        const newton::TrajectoryDataset data = newton::generate_trajectories(count, m, n, p, tol, seed, options);
        newton::write_trajectories(out, data);
        write_config(fs::path(out) / "config.json", sub);
        os << "kept " << data.manifest.converged << " of " << count << " trajectories, " << data.records.size()
           << " (state, direction) pairs, written to " << out << "\n";
        os << "mean trajectory length: " << fixed(data.mean_length(), 3) << "\n";
        return kOk;
    }
};

struct Train {
    std::string data;
    std::string preset = "desk";
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    std::string out;
    std::optional<std::size_t> batch_size;
    std::optional<double> lr_max;
    std::optional<double> lr_min;
    std::optional<double> grad_clip;
    double weight_decay = 0.01;
    double test_fraction = 0.1;
    double train_noise = 0.0;
    std::size_t checkpoint_every = 0;
    bool causal = false;
    bool no_positional = false;

    void add(CLI::App& sub) {
        sub.add_option("--data", data, "Dataset directory (linear systems or Newton trajectories)")->required();
        sub.add_option("--preset", preset, "Model size")->check(CLI::IsMember({"paper", "desk"}));
        sub.add_option("--epochs", epochs, "Training epochs");
        sub.add_option("--seed", seed, "Initialization and shuffle seed");
        sub.add_option("--out", out, "Output directory")->required();
        sub.add_option("--batch-size", batch_size, "Batch size (preset default: desk 64, paper 128)");
        sub.add_option("--lr-max", lr_max, "Peak learning rate (desk 1e-3, paper 1e-4)");
        sub.add_option("--lr-min", lr_min, "Final learning rate (desk 1e-4, paper 1e-5)");
        sub.add_option("--weight-decay", weight_decay, "AdamW weight decay");
        sub.add_option("--grad-clip", grad_clip, "Global gradient-norm clip");
        sub.add_option("--test-fraction", test_fraction, "Held-out share of the data");
        sub.add_option("--train-noise", train_noise, "Relative noise re-applied to b every epoch");
        sub.add_option("--checkpoint-every", checkpoint_every, "Write a checkpoint every K epochs");
        sub.add_flag("--causal", causal, "Mask attention to earlier tokens");
        sub.add_flag("--no-positional", no_positional, "Drop the positional embeddings");
    }

    int run(const CLI::App& sub, const Common&, std::ostream& os) const {
        const TrainingData d = load_training_data(data, test_fraction);
        model::ModelConfig mc = model::preset_by_name(preset, d.token_dim, d.max_tokens);
        mc.causal = causal;
        mc.positional = !no_positional;

        training::TrainConfig tc = preset_schedule(preset);
        tc.epochs = epochs;
        tc.seed = seed;
        tc.batch_size = batch_size.value_or(tc.batch_size);
        tc.lr_max = lr_max.value_or(tc.lr_max);
        tc.lr_min = lr_min.value_or(std::min(tc.lr_min, tc.lr_max));
        tc.grad_clip = grad_clip;
        tc.weight_decay = weight_decay;
        tc.train_noise = train_noise;
        tc.checkpoint_every = checkpoint_every;
        if (checkpoint_every > 0) {
            tc.checkpoint_dir = fs::path(out) / "checkpoints";
        }
        tc.validate();

        fs::create_directories(out);
        write_config(fs::path(out) / "config.json", sub);
        os << "training " << preset << " model on " << d.train.size() << " samples (" << d.test.size()
           << " held out)\n";
        training::TrainResult result = training::train(mc, tc, d.train, d.test, progress(os, epochs));
        if (d.family) {
            newton::tag_model(result.weights, *d.family);
        }
        finish_training(os, out, result, d);
        return kOk;
    }
};

struct FineTune {
    std::string from;
    std::string data;
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    std::string out;
    double lr = 5e-5;
    std::optional<std::size_t> batch_size;
    std::optional<double> grad_clip;
    double weight_decay = 0.01;
    double test_fraction = 0.1;
    double train_noise = 0.0;
    std::size_t checkpoint_every = 0;

    void add(CLI::App& sub) {
        sub.add_option("--from", from, "Pretrained checkpoint")->required();
        sub.add_option("--data", data, "Dataset directory")->required();
        sub.add_option("--epochs", epochs, "Fine-tuning epochs");
        sub.add_option("--seed", seed, "Shuffle seed");
        sub.add_option("--out", out, "Output directory")->required();
        sub.add_option("--lr", lr, "Constant learning rate");
        sub.add_option("--batch-size", batch_size, "Batch size (defaults to the checkpoint's preset)");
        sub.add_option("--weight-decay", weight_decay, "AdamW weight decay");
        sub.add_option("--grad-clip", grad_clip, "Global gradient-norm clip");
        sub.add_option("--test-fraction", test_fraction, "Held-out share of the data");
        sub.add_option("--train-noise", train_noise, "Relative noise re-applied to b every epoch");
        sub.add_option("--checkpoint-every", checkpoint_every, "Write a checkpoint every K epochs");
    }

    int run(const CLI::App& sub, const Common&, std::ostream& os) const {
        const model::ModelWeights pretrained = model::load_weights(from);
        const TrainingData d = load_training_data(data, test_fraction);
        check_model_fits(pretrained.config(), d.token_dim, d.max_tokens);

        training::TrainConfig tc = preset_schedule(pretrained.config().preset);
        tc.epochs = epochs;
        tc.seed = seed;
        tc.fine_tune = true;
        tc.fine_tune_lr = lr;
        tc.batch_size = batch_size.value_or(tc.batch_size);
        tc.grad_clip = grad_clip;
        tc.weight_decay = weight_decay;
        tc.train_noise = train_noise;
        tc.checkpoint_every = checkpoint_every;
        if (checkpoint_every > 0) {
            tc.checkpoint_dir = fs::path(out) / "checkpoints";
        }
        tc.validate();

        fs::create_directories(out);
        write_config(fs::path(out) / "config.json", sub);
        os << "fine-tuning " << from << " on " << d.train.size() << " samples (" << d.test.size()
           << " held out)\n";
        training::TrainResult result = training::fine_tune(pretrained, tc, d.train, d.test, progress(os, epochs));
        if (d.family) {
            newton::tag_model(result.weights, *d.family);
        }
        finish_training(os, out, result, d);
        return kOk;
    }
};

struct BenchNoise {
    std::string model_path;
    std::string data;
    std::string levels = kDefaultLevels;
    double rcond = 1e-15;
    std::uint64_t seed = 0;
    std::string out;

    void add(CLI::App& sub) {
        sub.add_option("--model", model_path, "Trained checkpoint")->required();
        sub.add_option("--data", data, "Linear-system dataset directory")->required();
        sub.add_option("--levels", levels, "Comma-separated relative noise levels");
        sub.add_option("--rcond", rcond, "Singular-value cutoff of the SVD solver");
        sub.add_option("--seed", seed, "Noise seed");
        sub.add_option("--out", out, "Output CSV")->required();
    }

    int run(const CLI::App& sub, const Common&, std::ostream& os) const {
        const std::vector<double> lv = parse_levels(levels);
        const model::ModelWeights weights = model::load_weights(model_path);
        const bvp::Dataset ds = bvp::read_dataset(data);
        check_model_fits(weights.config(), ds.dim() + 1, ds.dim());
        const training::SupervisedSet set = training::make_supervised(ds);
        if (set.empty()) {
            throw DatasetError("no systems in " + data);
        }
        const auto rows = training::noise_benchmark(weights, set, lv, rcond, seed);
        io::write_file(out, training::noise_table_csv(rows));
        write_config(sidecar(out, ".config.json"), sub);

        os << "median relative mse over " << set.size() << " systems\n";
        os << std::setw(10) << "level" << std::setw(13) << "model" << std::setw(13) << "lu" << std::setw(13)
           << "qr" << std::setw(13) << "svd" << "\n";
        for (const auto& r : rows) {
            os << std::setw(10) << sci(r.level, 1) << std::setw(13) << sci(r.model, 3) << std::setw(13)
               << sci(r.lu, 3) << std::setw(13) << sci(r.qr, 3) << std::setw(13) << sci(r.svd, 3) << "\n";
        }
        os << "wrote " << out << "\n";
        return kOk;
    }
};

struct BenchNewton {
    std::string model_path;
    std::optional<std::size_t> m;
    std::optional<std::size_t> n;
    std::optional<double> p;
    std::optional<std::uint64_t> family_seed;
    std::optional<double> tol;
    std::size_t trials = 10;
    std::size_t first_problem = 1000000;
    std::size_t max_iter = 100;
    bool line_search = false;
    std::string out;

    void add(CLI::App& sub) {
        sub.add_option("--model", model_path, "Checkpoint trained on Newton trajectories")->required();
        sub.add_option("--m", m, "Rows of A (must match the model's problem family)");
        sub.add_option("--n", n, "Columns of A");
        sub.add_option("--p", p, "Exponent of the residual norm");
        sub.add_option("--family-seed", family_seed, "Problem-family seed for untagged models");
        sub.add_option("--tol", tol, "Decrement tolerance (defaults to the training tolerance)");
        sub.add_option("--trials", trials, "Number of test problems");
        sub.add_option("--first-problem", first_problem, "Family index of the first test problem");
        sub.add_option("--max-iter", max_iter, "Iteration cap for both methods");
        sub.add_flag("--line-search", line_search, "Armijo backtracking for both methods");
        sub.add_option("--out", out, "Output CSV")->required();
    }

    newton::TrajectoryManifest family(const model::ModelWeights& weights) const {
        newton::TrajectoryManifest f;
        if (weights.metadata().count("newton.m") > 0) {
            f = newton::family_from_model(weights);
            auto agree = [](const char* flag, const auto& given, const auto& expected) {
                if (given && *given != expected) {
                    std::ostringstream msg;
                    msg << flag << " " << *given << " disagrees with the model's problem family (" << expected
                        << ")";
                    throw DataError(msg.str());
                }
            };
            agree("--m", m, f.m);
            agree("--n", n, f.n);
            agree("--p", p, f.p);
            agree("--family-seed", family_seed, f.seed);
        } else {
            if (!m || !n) {
                throw DataError("model carries no problem-family metadata; pass --m and --n");
            }
            f.m = *m;
            f.n = *n;
            f.p = p.value_or(6.0);
            f.seed = family_seed.value_or(0);
            f.shared_matrix = true;
        }
        if (tol) {
            f.tol = *tol;
        }
        return f;
    }

    int run(const CLI::App& sub, const Common&, std::ostream& os) const {
        auto weights = std::make_shared<const model::ModelWeights>(model::load_weights(model_path));
        const newton::TrajectoryManifest f = family(*weights);
        check_model_fits(weights->config(), 2, f.n);
        const auto exact = newton::DirectionProvider::exact();
        const auto learned = newton::DirectionProvider::learned(weights);
        newton::NewtonOptions options;
        options.tol = f.tol;
        options.max_iter = max_iter;
        options.line_search = line_search;

        std::ostringstream csv;
        csv << "trial,method,iterations,converged,stop_reason,final_objective,seconds\n";
        std::vector<double> exact_latency;
        std::vector<double> model_latency;
        std::vector<double> ratios;
        std::size_t exact_converged = 0;
        std::size_t learned_converged = 0;
        for (std::size_t t = 0; t < trials; ++t) {
            const newton::LpProblem prob = newton::family_problem(f, first_problem + t);
            const linalg::Vector x0(f.n, 0.0);
            const auto e = newton::accelerated_newton(prob, x0, exact, options);
            const auto l = newton::accelerated_newton(prob, x0, learned, options);
            for (const auto* r : {&e, &l}) {
                const bool is_exact = r == &e;
                csv << t << "," << (is_exact ? "exact" : "learned") << "," << r->trajectory.iterations() << ","
                    << (r->trajectory.converged ? "true" : "false") << ","
                    << newton::to_string(r->trajectory.stop_reason) << "," << io::format_double(r->trajectory.final_objective())
                    << "," << r->timing.total_seconds << "\n";
            }
            exact_converged += e.trajectory.converged ? 1 : 0;
            learned_converged += l.trajectory.converged ? 1 : 0;
            exact_latency.push_back(e.timing.first_direction_seconds);
            model_latency.push_back(l.timing.first_direction_seconds);
            ratios.push_back(l.trajectory.final_objective() / e.trajectory.final_objective());
            os << "trial " << t << ": exact " << e.trajectory.iterations() << " it "
               << sci(e.trajectory.final_objective()) << ", learned " << l.trajectory.iterations() << " it "
               << sci(l.trajectory.final_objective()) << "\n";
        }
        io::write_file(out, csv.str());

        json latency{
            {"first_model_evaluation_seconds", model_latency.empty() ? 0.0 : model_latency.front()},
            {"later_model_evaluation_seconds_median",
             median_of(model_latency.size() > 1
                           ? std::vector<double>(model_latency.begin() + 1, model_latency.end())
                           : std::vector<double>{})},
            {"exact_direction_seconds_median", median_of(exact_latency)},
        };
        io::write_file(sidecar(out, ".latency.json"), latency.dump(2) + "\n");
        write_config(sidecar(out, ".config.json"), sub);

        os << "converged: exact " << exact_converged << "/" << trials << ", learned " << learned_converged << "/"
           << trials << "\n";
        if (!ratios.empty()) {
            os << "learned/exact final objective: median " << fixed(median_of(ratios), 3) << ", worst "
               << fixed(*std::max_element(ratios.begin(), ratios.end()), 3) << "\n";
        }
        os << "first model evaluation " << sci(latency["first_model_evaluation_seconds"].get<double>(), 2)
           << " s, later first-step evaluations (median) "
           << sci(latency["later_model_evaluation_seconds_median"].get<double>(), 2) << " s\n";
        os << "wrote " << out << "\n";
        return kOk;
    }
};

struct Gradcheck {
    std::string op;
    std::uint64_t seed = 1;
    bool gelu_fault = false;

    void add(CLI::App& sub) {
        sub.add_option("--op", op, "Run only this check")->check(CLI::IsMember(checks::gradcheck_ops()));
        sub.add_option("--seed", seed, "Seed of the random test points");
        sub.add_flag("--inject-gelu-fault", gelu_fault, "Flip the sign of the GELU backward")->group("");
    }

    int run(const CLI::App&, const Common&, std::ostream& os) const {
        ad::testing::set_gelu_backward_fault(gelu_fault);
        std::vector<checks::CheckResult> results;
        try {
            results = checks::run_gradchecks(op, seed);
        } catch (...) {
            ad::testing::set_gelu_backward_fault(false);
            throw;
        }
        ad::testing::set_gelu_backward_fault(false);
        os << checks::format_table(results);
        const bool ok = checks::all_passed(results);
        os << (ok ? "all checks passed\n" : "gradient check FAILED\n");
        return ok ? kOk : kNumericalFailure;
    }
};

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Transformer solvers for ill-conditioned linear systems", "algebraformer"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);

    Common common;
    GenBvp gen_bvp;
    GenNewton gen_newton;
    Train train;
    FineTune fine_tune;
    BenchNoise bench_noise;
    BenchNewton bench_newton;
    Gradcheck gradcheck;

    std::vector<std::pair<CLI::App*, std::function<int()>>> commands;
    auto add = [&](auto& cmd, const char* name, const char* help) {
        CLI::App* sub = app.add_subcommand(name, help);
        common.add(*sub);
        cmd.add(*sub);
        commands.emplace_back(sub, [&cmd, sub, &common, &out] { return cmd.run(*sub, common, out); });
    };
    add(gen_bvp, "gen-bvp", "Generate labeled linear systems from spectral BVP discretizations");
    add(gen_newton, "gen-newton", "Generate Newton trajectories for l_p regression");
    add(train, "train", "Train a model from scratch");
    add(fine_tune, "fine-tune", "Continue training a checkpoint at a constant learning rate");
    add(bench_noise, "bench-noise", "Compare the model with LU, QR and SVD under noise in b");
    add(bench_newton, "bench-newton", "Compare exact and learned Newton directions");
    add(gradcheck, "gradcheck", "Finite-difference checks of every derivative");

    try {
        const std::vector<std::string> expanded = expand_args(app, args);
        std::vector<const char*> argv{"algebraformer"};
        for (const auto& a : expanded) {
            argv.push_back(a.c_str());
        }
        app.parse(static_cast<int>(argv.size()), argv.data());
        for (const auto& [sub, action] : commands) {
            if (sub->parsed()) {
                return action();
            }
        }
        return kUsage;
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kOk : kUsage;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kNumericalFailure;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kDataError;
    }
}

} // namespace algebraformer::cli
