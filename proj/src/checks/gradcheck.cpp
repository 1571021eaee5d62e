#include "algebraformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "algebraformer/autodiff.hpp"
#include "algebraformer/errors.hpp"
#include "algebraformer/model.hpp"
#include "algebraformer/newton.hpp"
#include "algebraformer/rng.hpp"

namespace algebraformer::checks {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

constexpr double kOpTol = 1e-5;
constexpr double kModelTol = 1e-4;
constexpr double kHessianTol = 1e-4;
constexpr int kCases = 5;
constexpr std::size_t kModelCoords = 48;

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) {
        v = scale * rng.normal();
    }
    return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

/// sum(R * y) with a fixed random R, so every output coordinate matters.
Var project(Var y, const Tensor& weights) {
    Tape& tape = y.tape();
    return ad::sum(ad::mul(y, tape.constant(weights)));
}

struct Case {
    Case(std::string detail_, Tensor x_, std::function<Var(Tape&, Var)> f_, double tol_ = kOpTol,
         ad::GradcheckNorm norm_ = ad::GradcheckNorm::PerCoordinate, std::vector<std::size_t> coords_ = {})
        : detail(std::move(detail_)), x(std::move(x_)), f(std::move(f_)), tol(tol_), norm(norm_),
          coords(std::move(coords_)) {}

    std::string detail;
    Tensor x;
    std::function<Var(Tape&, Var)> f;
    double tol;
    ad::GradcheckNorm norm;
    std::vector<std::size_t> coords;  ///< empty: every coordinate
};

/// One op with a single differentiable input; `build` maps the input to the
/// op output, and a random projection makes it scalar.
template <class Build>
Case unary_case(std::string detail, Tensor x, Shape out_shape, Rng& rng, Build build) {
    Tensor w = random_tensor(std::move(out_shape), rng);
    return Case(std::move(detail), std::move(x), [build, w](Tape& t, Var v) { return project(build(t, v), w); });
}

using CaseGen = std::function<std::vector<Case>(Rng&)>;

std::vector<std::pair<std::string, CaseGen>> registry() {
    std::vector<std::pair<std::string, CaseGen>> ops;

    ops.emplace_back("matmul", [](Rng& rng) {
        std::vector<Case> cases;
        for (int c = 0; c < kCases; ++c) {
            const std::size_t B = pick(rng, 1, 3), M = pick(rng, 1, 4), K = pick(rng, 1, 5), N = pick(rng, 1, 4);
            const Tensor a = random_tensor({B, M, K}, rng);
            const Tensor b = random_tensor({K, N}, rng);
            const std::string d = ad::shape_string({B, M, K}) + " x " + ad::shape_string({K, N});
            cases.push_back(unary_case(d + " d/da", a, {B, M, N}, rng,
                                       [b](Tape& t, Var v) { return ad::matmul(v, t.constant(b)); }));
            cases.push_back(unary_case(d + " d/db", b, {B, M, N}, rng,
                                       [a](Tape& t, Var v) { return ad::matmul(t.constant(a), v); }));
        }
        return cases;
    });
    ops.emplace_back("matmul_batched", [](Rng& rng) {
        std::vector<Case> cases;
        for (int c = 0; c < kCases; ++c) {
            const std::size_t B = pick(rng, 1, 2), H = pick(rng, 1, 3), M = pick(rng, 1, 4), K = pick(rng, 1, 4),
                              N = pick(rng, 1, 4);
            const Tensor a = random_tensor({B, H, M, K}, rng);
            const Tensor b = random_tensor({B, H, K, N}, rng);
            const std::string d = ad::shape_string(a.shape()) + " x " + ad::shape_string(b.shape());
            cases.push_back(unary_case(d + " d/da", a, {B, H, M, N}, rng,
                                       [b](Tape& t, Var v) { return ad::matmul(v, t.constant(b)); }));
            cases.push_back(unary_case(d + " d/db", b, {B, H, M, N}, rng,
                                       [a](Tape& t, Var v) { return ad::matmul(t.constant(a), v); }));
        }
        return cases;
    });
    for (const char* name : {"add", "sub"}) {
        const bool is_add = std::string(name) == "add";
        ops.emplace_back(name, [is_add](Rng& rng) {
            auto op = [is_add](Var a, Var b) { return is_add ? ad::add(a, b) : ad::sub(a, b); };
            std::vector<Case> cases;
            for (int c = 0; c < kCases; ++c) {
                const std::size_t B = pick(rng, 1, 3), T = pick(rng, 1, 4), D = pick(rng, 1, 5);
                const Shape full{B, T, D};
                const Shape tail = c % 2 == 0 ? Shape{D} : Shape{T, D};
                const Tensor a = random_tensor(full, rng);
                const Tensor b = random_tensor(tail, rng);
                const std::string d = ad::shape_string(full) + " + " + ad::shape_string(tail);
                cases.push_back(unary_case(d + " d/da", a, full, rng,
                                           [b, op](Tape& t, Var v) { return op(v, t.constant(b)); }));
                cases.push_back(unary_case(d + " d/db", b, full, rng,
                                           [a, op](Tape& t, Var v) { return op(t.constant(a), v); }));
            }
            return cases;
        });
    }
    ops.emplace_back("mul", [](Rng& rng) {
        std::vector<Case> cases;
        for (int c = 0; c < kCases; ++c) {
            const Shape s{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 5)};
            const Tensor a = random_tensor(s, rng);
            const Tensor b = random_tensor(s, rng);
            cases.push_back(unary_case(ad::shape_string(s) + " d/da", a, s, rng,
                                       [b](Tape& t, Var v) { return ad::mul(v, t.constant(b)); }));
            cases.push_back(unary_case(ad::shape_string(s) + " d/db", b, s, rng,
                                       [a](Tape& t, Var v) { return ad::mul(t.constant(a), v); }));
        }
        return cases;
    });
    ops.emplace_back("mul_scalar", [](Rng& rng) {
        std::vector<Case> cases;
        for (int c = 0; c < kCases; ++c) {
            const Shape s{pick(rng, 1, 3), pick(rng, 1, 5)};
            const double k = rng.uniform(-2.0, 2.0);
            cases.push_back(unary_case(ad::shape_string(s), random_tensor(s, rng), s, rng,
                                       [k](Tape&, Var v) { return ad::mul_scalar(v, k); }));
        }
        return cases;
    });
    ops.emplace_back("transpose", [](Rng& rng) {
        std::vector<Case> cases;
        for (int c = 0; c < kCases; ++c) {
            const std::size_t B = pick(rng, 1, 3), M = pick(rng, 1, 4), N = pick(rng, 1, 4);
            cases.push_back(unary_case(ad::shape_string({B, M, N}), random_tensor({B, M, N}, rng), {B, N, M}, rng,
                                       [](Tape&, Var v) { return ad::transpose(v); }));
        }
        return cases;
    });
    ops.emplace_back("reshape", [](Rng& rng) {
        std::vector<Case> cases;
        for (int c = 0; c < kCases; ++c) {
            const std::size_t B = pick(rng, 1, 3), T = pick(rng, 1, 4), D = pick(rng, 1, 4);
            cases.push_back(unary_case(ad::shape_string({B, T, D}), random_tensor({B, T, D}, rng), {B, T * D}, rng,
                                       [B, T, D](Tape&, Var v) { return ad::reshape(v, {B, T * D}); }));
        }
        return cases;
    });
    ops.emplace_back("slice_rows", [](Rng& rng) {
        std::vector<Case> cases;
        for (int c = 0; c < kCases; ++c) {
            const std::size_t R = pick(rng, 1, 6), D = pick(rng, 1, 4), k = pick(rng, 1, R);
            cases.push_back(unary_case(ad::shape_string({R, D}) + " first " + std::to_string(k),
                                       random_tensor({R, D}, rng), {k, D}, rng,
                                       [k](Tape&, Var v) { return ad::slice_rows(v, k); }));
        }
        return cases;
    });
    ops.emplace_back("split_heads", [](Rng& rng) {
        std::vector<Case> cases;
        for (int c = 0; c < kCases; ++c) {
            const std::size_t B = pick(rng, 1, 2), T = pick(rng, 1, 4), H = pick(rng, 1, 3), Dh = pick(rng, 1, 3);
            cases.push_back(unary_case(ad::shape_string({B, T, H * Dh}) + " heads " + std::to_string(H),
                                       random_tensor({B, T, H * Dh}, rng), {B, H, T, Dh}, rng,
                                       [H](Tape&, Var v) { return ad::split_heads(v, H); }));
        }
        return cases;
    });
    ops.emplace_back("merge_heads", [](Rng& rng) {
        std::vector<Case> cases;
        for (int c = 0; c < kCases; ++c) {
            const std::size_t B = pick(rng, 1, 2), T = pick(rng, 1, 4), H = pick(rng, 1, 3), Dh = pick(rng, 1, 3);
            cases.push_back(unary_case(ad::shape_string({B, H, T, Dh}), random_tensor({B, H, T, Dh}, rng),
                                       {B, T, H * Dh}, rng, [](Tape&, Var v) { return ad::merge_heads(v); }));
        }
        return cases;
    });
    ops.emplace_back("causal_mask", [](Rng& rng) {
        std::vector<Case> cases;
        for (int c = 0; c < kCases; ++c) {
            const std::size_t B = pick(rng, 1, 2), T = pick(rng, 1, 5);
            cases.push_back(unary_case(ad::shape_string({B, T, T}) + " through softmax",
                                       random_tensor({B, T, T}, rng), {B, T, T}, rng,
                                       [](Tape&, Var v) { return ad::softmax_last_axis(ad::causal_mask(v)); }));
        }
        return cases;
    });
    ops.emplace_back("sum", [](Rng& rng) {
        std::vector<Case> cases;
        for (int c = 0; c < kCases; ++c) {
            const Shape s{pick(rng, 1, 3), pick(rng, 1, 5)};
            const double k = rng.uniform(0.5, 2.0);
            cases.push_back({ad::shape_string(s), random_tensor(s, rng),
                             [k](Tape&, Var v) { return ad::mul_scalar(ad::sum(v), k); }});
        }
        return cases;
    });
    ops.emplace_back("layer_norm", [](Rng& rng) {
        std::vector<Case> cases;
        for (int c = 0; c < kCases; ++c) {
            const std::size_t B = pick(rng, 1, 3), T = pick(rng, 1, 3), D = pick(rng, 3, 6);
            const Shape s{B, T, D};
            const Tensor x = random_tensor(s, rng);
            const Tensor g = random_tensor({D}, rng);
            const Tensor b = random_tensor({D}, rng);
            const std::string d = ad::shape_string(s);
            cases.push_back(unary_case(d + " d/dx", x, s, rng, [g, b](Tape& t, Var v) {
                return ad::layer_norm(v, t.constant(g), t.constant(b));
            }));
            cases.push_back(unary_case(d + " d/dgain", g, s, rng, [x, b](Tape& t, Var v) {
                return ad::layer_norm(t.constant(x), v, t.constant(b));
            }));
            cases.push_back(unary_case(d + " d/dbias", b, s, rng, [x, g](Tape& t, Var v) {
                return ad::layer_norm(t.constant(x), t.constant(g), v);
            }));
        }
        return cases;
    });
    ops.emplace_back("softmax", [](Rng& rng) {
        std::vector<Case> cases;
        for (int c = 0; c < kCases; ++c) {
            const Shape s{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 6)};
            cases.push_back(unary_case(ad::shape_string(s), random_tensor(s, rng), s, rng,
                                       [](Tape&, Var v) { return ad::softmax_last_axis(v); }));
        }
        return cases;
    });
    ops.emplace_back("gelu", [](Rng& rng) {
        std::vector<Case> cases;
        for (int c = 0; c < kCases; ++c) {
            const Shape s{pick(rng, 1, 3), pick(rng, 1, 6)};
            cases.push_back(unary_case(ad::shape_string(s), random_tensor(s, rng), s, rng,
                                       [](Tape&, Var v) { return ad::gelu(v); }));
        }
        return cases;
    });
    ops.emplace_back("mse_loss", [](Rng& rng) {
        std::vector<Case> cases;
        for (int c = 0; c < kCases; ++c) {
            const Shape s = c == 0 ? Shape{pick(rng, 1, 6)} : Shape{pick(rng, 1, 3), pick(rng, 1, 6)};
            const Tensor p = random_tensor(s, rng);
            const Tensor t = random_tensor(s, rng);
            cases.push_back({ad::shape_string(s) + " d/dpred", p,
                             [t](Tape& tape, Var v) { return ad::mse_loss(v, tape.constant(t)); }});
            cases.push_back({ad::shape_string(s) + " d/dtarget", t,
                             [p](Tape& tape, Var v) { return ad::mse_loss(tape.constant(p), v); }});
        }
        return cases;
    });
    ops.emplace_back("model", [](Rng& rng) {
        // mse_loss(forward(tokens), target) at desk width, differentiated with
        // respect to every parameter tensor and the input tokens. Normwise:
        // with ~1e5 coordinates some true gradients fall below what a 1e-6
        // central difference resolves.
        model::ModelConfig cfg = model::desk_preset(5, 4);
        model::ModelWeights w = model::init_weights(cfg, rng.next_u64());
        for (std::size_t i = 0; i < w.size(); ++i) {
            for (double& v : w.tensor(i).data()) {
                v += 0.1 * rng.normal();
            }
        }
        const std::size_t B = 2, T = 4;
        const Tensor tokens = random_tensor({B, T, cfg.token_dim}, rng);
        // Targets near the current output keep the loss small, so finite
        // differences are not swamped by roundoff in the forward pass.
        Tensor target = model::forward(w, tokens);
        for (double& v : target.data()) {
            v += 0.1 * rng.normal();
        }
        std::vector<Case> cases;
        auto loss_with = [w, tokens, target](std::size_t slot) {
            return [w, tokens, target, slot](Tape& t, Var v) {
                auto params = model::bind_parameters(t, w, false);
                Var input = t.constant(tokens);
                if (slot == w.size()) {
                    input = v;
                } else {
                    params[slot] = v;
                }
                return ad::mse_loss(model::forward(t, w, params, input), t.constant(target));
            };
        };
        auto sample = [&rng](std::size_t numel) {
            std::vector<std::size_t> idx;
            if (numel > kModelCoords) {
                for (std::size_t k = 0; k < kModelCoords; ++k) {
                    idx.push_back(rng.below(numel));
                }
            }
            return idx;
        };
        for (std::size_t slot = 0; slot < w.size(); ++slot) {
            const std::string& name = w.name(slot);
            // Key biases shift every score in a row equally; softmax cancels
            // them, so their true gradient is exactly zero.
            if (name.ends_with("attn.bk")) {
                continue;
            }
            cases.push_back({name, w.tensor(slot), loss_with(slot), kModelTol, ad::GradcheckNorm::Normwise,
                             sample(w.tensor(slot).numel())});
        }
        cases.push_back({"tokens", tokens, loss_with(w.size()), kModelTol, ad::GradcheckNorm::Normwise, {}});
        return cases;
    });
    return ops;
}

CheckResult make_result(std::string op, std::string detail, double err, double tol) {
    return {std::move(op), std::move(detail), err, tol, std::isfinite(err) && err <= tol};
}

/// Random l_p instance and a point whose residuals all exceed `floor`.
std::pair<newton::LpProblem, linalg::Vector> lp_point(double p, double floor, Rng& rng) {
    for (;;) {
        newton::LpProblem prob = newton::sample_problem(12, 4, p, rng.next_u64());
        linalg::Vector x(prob.n());
        for (double& v : x) {
            v = rng.uniform(-1.0, 1.0);
        }
        const linalg::Vector r = newton::residual(prob, x);
        const double min_r = std::abs(*std::min_element(r.begin(), r.end(), [](double a, double b) {
            return std::abs(a) < std::abs(b);
        }));
        if (min_r > floor) {
            return {std::move(prob), std::move(x)};
        }
    }
}

double rel_err(double a, double n) { return std::abs(a - n) / (std::abs(a) + std::abs(n) + 1e-8); }

std::vector<CheckResult> newton_gradient_checks(Rng& rng) {
    std::vector<CheckResult> out;
    constexpr double h = 1e-6;
    for (double p : {1.5, 2.0, 3.0, 6.0}) {
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            auto [prob, x] = lp_point(p, 1e-4, rng);
            const linalg::Vector g = newton::gradient(prob, x);
            for (std::size_t j = 0; j < x.size(); ++j) {
                linalg::Vector xp = x;
                linalg::Vector xm = x;
                xp[j] += h;
                xm[j] -= h;
                const double fd = (newton::objective(prob, xp) - newton::objective(prob, xm)) / (2.0 * h);
                worst = std::max(worst, rel_err(g[j], fd));
            }
        }
        char detail[64];
        std::snprintf(detail, sizeof detail, "p=%g, 100 points", p);
        out.push_back(make_result("newton_gradient", detail, worst, kOpTol));
    }
    return out;
}

std::vector<CheckResult> newton_hessian_checks(Rng& rng) {
    std::vector<CheckResult> out;
    constexpr double h = 1e-6;
    for (double p : {1.5, 2.0, 3.0, 6.0}) {
        double worst = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            auto [prob, x] = lp_point(p, 1e-3, rng);
            const linalg::DenseMatrix H = newton::hessian(prob, x);
            for (std::size_t j = 0; j < x.size(); ++j) {
                linalg::Vector xp = x;
                linalg::Vector xm = x;
                xp[j] += h;
                xm[j] -= h;
                const linalg::Vector gp = newton::gradient(prob, xp);
                const linalg::Vector gm = newton::gradient(prob, xm);
                for (std::size_t i = 0; i < x.size(); ++i) {
                    worst = std::max(worst, rel_err(H(i, j), (gp[i] - gm[i]) / (2.0 * h)));
                }
            }
        }
        char detail[64];
        std::snprintf(detail, sizeof detail, "p=%g, 20 points, min|r|>1e-3", p);
        out.push_back(make_result("newton_hessian", detail, worst, kHessianTol));
    }
    return out;
}

} // namespace

std::vector<std::string> gradcheck_ops() {
    std::vector<std::string> names;
    for (const auto& [name, gen] : registry()) {
        names.push_back(name);
    }
    names.emplace_back("newton_gradient");
    names.emplace_back("newton_hessian");
    return names;
}

std::vector<CheckResult> run_gradchecks(const std::string& only, std::uint64_t seed) {
    const auto names = gradcheck_ops();
    if (!only.empty() && std::find(names.begin(), names.end(), only) == names.end()) {
        throw DataError("unknown gradcheck op '" + only + "'");
    }
    std::vector<CheckResult> out;
    std::uint64_t slot = 0;
    for (const auto& [name, gen] : registry()) {
        Rng rng(derive_seed(seed, slot++));
        if (!only.empty() && only != name) {
            continue;
        }
        for (const Case& c : gen(rng)) {
            out.push_back(make_result(name, c.detail, ad::gradcheck(c.f, c.x, 1e-6, c.norm, c.coords), c.tol));
        }
    }
    if (only.empty() || only == "newton_gradient") {
        Rng rng(derive_seed(seed, slot));
        auto r = newton_gradient_checks(rng);
        out.insert(out.end(), r.begin(), r.end());
    }
    ++slot;
    if (only.empty() || only == "newton_hessian") {
        Rng rng(derive_seed(seed, slot));
        auto r = newton_hessian_checks(rng);
        out.insert(out.end(), r.begin(), r.end());
    }
    return out;
}

bool all_passed(const std::vector<CheckResult>& results) {
    return !results.empty() &&
           std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

std::string format_table(const std::vector<CheckResult>& results) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %-40s %12s %8s  %s\n", "op", "case", "rel_error", "tol", "status");
    os << line;
    for (const auto& r : results) {
        std::snprintf(line, sizeof line, "%-16s %-40s %12.3e %8.0e  %s\n", r.op.c_str(), r.detail.c_str(), r.error,
                      r.tolerance, r.passed ? "ok" : "FAIL");
        os << line;
    }
    return os.str();
}

} // namespace algebraformer::checks
