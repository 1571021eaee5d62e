#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>

#include "algebraformer/autodiff.hpp"
#include "algebraformer/errors.hpp"
#include "kernels.hpp"

namespace algebraformer::ad {

namespace {

std::atomic<bool> g_gelu_fault{false};

void require_same_tape(Var a, Var b) {
    if (&a.tape() != &b.tape()) {
        throw Error("operands live on different tapes");
    }
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeMismatch(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                        shape_string(b));
}

bool is_suffix(const Shape& whole, const Shape& tail) {
    if (tail.size() > whole.size()) {
        return false;
    }
    return std::equal(tail.begin(), tail.end(), whole.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

} // namespace

Var matmul(Var a, Var b) {
    require_same_tape(a, b);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2) {
        mismatch("matmul", sa, sb);
    }
    const std::size_t M = sa[sa.size() - 2];
    const std::size_t K = sa.back();
    const std::size_t N = sb.back();
    if (sb[sb.size() - 2] != K) {
        mismatch("matmul", sa, sb);
    }
    const bool shared = sb.size() == 2;
    if (!shared && (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin()))) {
        mismatch("matmul", sa, sb);
    }
    const std::size_t batches = shape_numel(Shape(sa.begin(), sa.end() - 2));
    Shape out_shape = sa;
    out_shape.back() = N;
    Tensor out(out_shape, 0.0);
    const double* A = a.value().data().data();
    const double* B = b.value().data().data();
    if (shared) {
        kernels::gemm_nn(batches * M, K, N, A, B, out.data().data());
    } else {
        for (std::size_t t = 0; t < batches; ++t) {
            kernels::gemm_nn(M, K, N, A + t * M * K, B + t * K * N, out.data().data() + t * M * N);
        }
    }
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return a.tape().record(std::move(out), {ia, ib}, [=](Tape& tape, std::size_t self) {
        const double* G = tape.incoming(self).data();
        const double* Av = tape.value(ia).data().data();
        const double* Bv = tape.value(ib).data().data();
        if (tape.requires_grad(ia)) {
            double* dA = tape.grad_slot(ia).data();
            if (shared) {
                kernels::gemm_nt(batches * M, N, K, G, Bv, dA);
            } else {
                for (std::size_t t = 0; t < batches; ++t) {
                    kernels::gemm_nt(M, N, K, G + t * M * N, Bv + t * K * N, dA + t * M * K);
                }
            }
        }
        if (tape.requires_grad(ib)) {
            double* dB = tape.grad_slot(ib).data();
            if (shared) {
                kernels::gemm_tn(batches * M, K, N, Av, G, dB);
            } else {
                for (std::size_t t = 0; t < batches; ++t) {
                    kernels::gemm_tn(M, K, N, Av + t * M * K, G + t * M * N, dB + t * K * N);
                }
            }
        }
    });
}

namespace {

Var add_impl(Var a, Var b, double sign) {
    require_same_tape(a, b);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (!is_suffix(sa, sb)) {
        mismatch(sign > 0 ? "add" : "sub", sa, sb);
    }
    Tensor out = a.value();
    const auto bv = b.value().data();
    const std::size_t inner = bv.size();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) {
        od[i] += sign * bv[i % inner];
    }
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return a.tape().record(std::move(out), {ia, ib}, [=](Tape& tape, std::size_t self) {
        const auto g = tape.incoming(self);
        tape.accumulate(ia, g);
        if (tape.requires_grad(ib)) {
            auto db = tape.grad_slot(ib);
            for (std::size_t i = 0; i < g.size(); ++i) {
                db[i % inner] += sign * g[i];
            }
        }
    });
}

} // namespace

Var add(Var a, Var b) { return add_impl(a, b, 1.0); }
Var sub(Var a, Var b) { return add_impl(a, b, -1.0); }

Var mul(Var a, Var b) {
    require_same_tape(a, b);
    if (a.shape() != b.shape()) {
        mismatch("mul", a.shape(), b.shape());
    }
    Tensor out = a.value();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] *= bv[i];
    }
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return a.tape().record(std::move(out), {ia, ib}, [=](Tape& tape, std::size_t self) {
        const auto g = tape.incoming(self);
        const auto av = tape.value(ia).data();
        const auto bv2 = tape.value(ib).data();
        if (tape.requires_grad(ia)) {
            auto da = tape.grad_slot(ia);
            for (std::size_t i = 0; i < g.size(); ++i) {
                da[i] += g[i] * bv2[i];
            }
        }
        if (tape.requires_grad(ib)) {
            auto db = tape.grad_slot(ib);
            for (std::size_t i = 0; i < g.size(); ++i) {
                db[i] += g[i] * av[i];
            }
        }
    });
}

Var mul_scalar(Var a, double s) {
    Tensor out = a.value();
    for (double& v : out.data()) {
        v *= s;
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [=](Tape& tape, std::size_t self) {
        const auto g = tape.incoming(self);
        auto da = tape.grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) {
            da[i] += s * g[i];
        }
    });
}

Var transpose(Var a) {
    const Shape& sa = a.shape();
    if (sa.size() < 2) {
        throw ShapeMismatch("transpose: needs rank >= 2, got " + shape_string(sa));
    }
    const std::size_t R = sa[sa.size() - 2];
    const std::size_t C = sa.back();
    const std::size_t batches = a.value().numel() / std::max<std::size_t>(R * C, 1);
    Shape out_shape = sa;
    std::swap(out_shape[sa.size() - 2], out_shape.back());
    Tensor out(out_shape, 0.0);
    const auto in = a.value().data();
    for (std::size_t t = 0; t < batches; ++t) {
        for (std::size_t r = 0; r < R; ++r) {
            for (std::size_t c = 0; c < C; ++c) {
                out[t * R * C + c * R + r] = in[t * R * C + r * C + c];
            }
        }
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [=](Tape& tape, std::size_t self) {
        const auto g = tape.incoming(self);
        auto da = tape.grad_slot(ia);
        for (std::size_t t = 0; t < batches; ++t) {
            for (std::size_t r = 0; r < R; ++r) {
                for (std::size_t c = 0; c < C; ++c) {
                    da[t * R * C + r * C + c] += g[t * R * C + c * R + r];
                }
            }
        }
    });
}

Var reshape(Var a, Shape shape) {
    if (shape_numel(shape) != a.value().numel()) {
        mismatch("reshape", a.shape(), shape);
    }
    Tensor out(std::move(shape), a.value().storage());
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [=](Tape& tape, std::size_t self) {
        tape.accumulate(ia, tape.incoming(self));
    });
}

Var slice_rows(Var a, std::size_t count) {
    const Shape& sa = a.shape();
    if (sa.empty() || count > sa[0]) {
        throw ShapeMismatch("slice_rows: cannot take " + std::to_string(count) + " rows of " +
                            shape_string(sa));
    }
    Shape out_shape = sa;
    out_shape[0] = count;
    const std::size_t n = shape_numel(out_shape);
    const auto in = a.value().data();
    Tensor out(out_shape, std::vector<double>(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(n)));
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [=](Tape& tape, std::size_t self) {
        const auto g = tape.incoming(self);
        auto da = tape.grad_slot(ia);
        for (std::size_t i = 0; i < n; ++i) {
            da[i] += g[i];
        }
    });
}

namespace {

// Index permutation between [B, T, H, Dh] and [B, H, T, Dh].
template <typename F>
void for_each_head_index(std::size_t B, std::size_t T, std::size_t H, std::size_t Dh, F&& f) {
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t h = 0; h < H; ++h) {
                const std::size_t src = ((b * T + t) * H + h) * Dh;
                const std::size_t dst = ((b * H + h) * T + t) * Dh;
                f(src, dst, Dh);
            }
        }
    }
}

} // namespace

Var split_heads(Var a, std::size_t heads) {
    const Shape& sa = a.shape();
    if (sa.size() != 3 || heads == 0 || sa[2] % heads != 0) {
        throw ShapeMismatch("split_heads: expected [B, T, H*Dh], got " + shape_string(sa));
    }
    const std::size_t B = sa[0];
    const std::size_t T = sa[1];
    const std::size_t H = heads;
    const std::size_t Dh = sa[2] / heads;
    Tensor out({B, H, T, Dh}, 0.0);
    const auto in = a.value().data();
    for_each_head_index(B, T, H, Dh, [&](std::size_t src, std::size_t dst, std::size_t len) {
        std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(src), len,
                    out.data().begin() + static_cast<std::ptrdiff_t>(dst));
    });
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [=](Tape& tape, std::size_t self) {
        const auto g = tape.incoming(self);
        auto da = tape.grad_slot(ia);
        for_each_head_index(B, T, H, Dh, [&](std::size_t src, std::size_t dst, std::size_t len) {
            for (std::size_t i = 0; i < len; ++i) {
                da[src + i] += g[dst + i];
            }
        });
    });
}

Var merge_heads(Var a) {
    const Shape& sa = a.shape();
    if (sa.size() != 4) {
        throw ShapeMismatch("merge_heads: expected [B, H, T, Dh], got " + shape_string(sa));
    }
    const std::size_t B = sa[0];
    const std::size_t H = sa[1];
    const std::size_t T = sa[2];
    const std::size_t Dh = sa[3];
    Tensor out({B, T, H * Dh}, 0.0);
    const auto in = a.value().data();
    for_each_head_index(B, T, H, Dh, [&](std::size_t src, std::size_t dst, std::size_t len) {
        std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(dst), len,
                    out.data().begin() + static_cast<std::ptrdiff_t>(src));
    });
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [=](Tape& tape, std::size_t self) {
        const auto g = tape.incoming(self);
        auto da = tape.grad_slot(ia);
        for_each_head_index(B, T, H, Dh, [&](std::size_t src, std::size_t dst, std::size_t len) {
            for (std::size_t i = 0; i < len; ++i) {
                da[dst + i] += g[src + i];
            }
        });
    });
}

Var causal_mask(Var a) {
    const Shape& sa = a.shape();
    if (sa.size() < 2 || sa[sa.size() - 2] != sa.back()) {
        throw ShapeMismatch("causal_mask: last two axes must be square, got " + shape_string(sa));
    }
    const std::size_t T = sa.back();
    Tensor out = a.value();
    const std::size_t mats = out.numel() / std::max<std::size_t>(T * T, 1);
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < mats; ++m) {
        for (std::size_t i = 0; i < T; ++i) {
            for (std::size_t j = i + 1; j < T; ++j) {
                out[m * T * T + i * T + j] = neg_inf;
            }
        }
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [=](Tape& tape, std::size_t self) {
        const auto g = tape.incoming(self);
        auto da = tape.grad_slot(ia);
        for (std::size_t m = 0; m < mats; ++m) {
            for (std::size_t i = 0; i < T; ++i) {
                for (std::size_t j = 0; j <= i; ++j) {
                    da[m * T * T + i * T + j] += g[m * T * T + i * T + j];
                }
            }
        }
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().data()) {
        s += v;
    }
    const std::size_t ia = a.id();
    return a.tape().record(Tensor::scalar(s), {ia}, [=](Tape& tape, std::size_t self) {
        const double g = tape.incoming(self)[0];
        auto da = tape.grad_slot(ia);
        for (double& v : da) {
            v += g;
        }
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    require_same_tape(x, gain);
    require_same_tape(x, bias);
    const Shape& sx = x.shape();
    if (sx.empty() || gain.shape() != Shape{sx.back()} || bias.shape() != Shape{sx.back()}) {
        throw ShapeMismatch("layer_norm: gain/bias must match the last axis of " + shape_string(sx));
    }
    if (!(eps > 0.0)) {
        throw DataError("layer_norm: eps must be positive");
    }
    const std::size_t D = sx.back();
    const std::size_t rows = x.value().numel() / std::max<std::size_t>(D, 1);
    Tensor out(sx, 0.0);
    std::vector<double> xhat(x.value().numel());
    std::vector<double> rstd(rows);
    const auto in = x.value().data();
    const auto g = gain.value().data();
    const auto bb = bias.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * D;
        double mean = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            mean += row[j];
        }
        mean /= static_cast<double>(D);
        double var = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(D);
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd[r] = rs;
        for (std::size_t j = 0; j < D; ++j) {
            const double h = (row[j] - mean) * rs;
            xhat[r * D + j] = h;
            out[r * D + j] = h * g[j] + bb[j];
        }
    }
    const std::size_t ix = x.id();
    const std::size_t ig = gain.id();
    const std::size_t ib = bias.id();
    return x.tape().record(
        std::move(out), {ix, ig, ib},
        [=, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& tape, std::size_t self) {
            const auto dy = tape.incoming(self);
            const auto gv = tape.value(ig).data();
            if (tape.requires_grad(ig) || tape.requires_grad(ib)) {
                auto dg = tape.grad_slot(ig);
                auto db = tape.grad_slot(ib);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < D; ++j) {
                        dg[j] += dy[r * D + j] * xhat[r * D + j];
                        db[j] += dy[r * D + j];
                    }
                }
            }
            if (tape.requires_grad(ix)) {
                auto dx = tape.grad_slot(ix);
                const double inv_d = 1.0 / static_cast<double>(D);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dh = 0.0;
                    double mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < D; ++j) {
                        const double dh = dy[r * D + j] * gv[j];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[r * D + j];
                    }
                    mean_dh *= inv_d;
                    mean_dh_h *= inv_d;
                    for (std::size_t j = 0; j < D; ++j) {
                        const double dh = dy[r * D + j] * gv[j];
                        dx[r * D + j] += rstd[r] * (dh - mean_dh - xhat[r * D + j] * mean_dh_h);
                    }
                }
            }
        });
}

Var softmax_last_axis(Var x) {
    const Shape& sx = x.shape();
    if (sx.empty() || sx.back() == 0) {
        throw ShapeMismatch("softmax_last_axis: empty last axis");
    }
    const std::size_t D = sx.back();
    const std::size_t rows = x.value().numel() / D;
    Tensor out(sx, 0.0);
    const auto in = x.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * D;
        const double mx = *std::max_element(row, row + D);
        double z = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            const double e = std::exp(row[j] - mx);
            out[r * D + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < D; ++j) {
            out[r * D + j] /= z;
        }
    }
    const std::size_t ix = x.id();
    return x.tape().record(std::move(out), {ix}, [=](Tape& tape, std::size_t self) {
        const auto dy = tape.incoming(self);
        const auto y = tape.value(self).data();
        auto dx = tape.grad_slot(ix);
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < D; ++j) {
                dot += dy[r * D + j] * y[r * D + j];
            }
            for (std::size_t j = 0; j < D; ++j) {
                dx[r * D + j] += y[r * D + j] * (dy[r * D + j] - dot);
            }
        }
    });
}

namespace {

// Phi via erfc stays accurate in the left tail, where 1 + erf cancels.
double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

} // namespace

double gelu_value(double x) { return x * normal_cdf(x); }

double gelu_derivative(double x) {
    const double cdf = normal_cdf(x);
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

Var gelu(Var x) {
    Tensor out = x.value();
    for (double& v : out.data()) {
        v = gelu_value(v);
    }
    const std::size_t ix = x.id();
    return x.tape().record(std::move(out), {ix}, [=](Tape& tape, std::size_t self) {
        const auto dy = tape.incoming(self);
        const auto xv = tape.value(ix).data();
        auto dx = tape.grad_slot(ix);
        const double sign = g_gelu_fault.load(std::memory_order_relaxed) ? -1.0 : 1.0;
        for (std::size_t i = 0; i < dy.size(); ++i) {
            dx[i] += sign * dy[i] * gelu_derivative(xv[i]);
        }
    });
}

Var mse_loss(Var pred, Var target) {
    require_same_tape(pred, target);
    if (pred.shape() != target.shape() || pred.shape().empty()) {
        mismatch("mse_loss", pred.shape(), target.shape());
    }
    const std::size_t n = pred.shape().back();
    const std::size_t batch = pred.value().numel() / std::max<std::size_t>(n, 1);
    const auto p = pred.value().data();
    const auto t = target.value().data();
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - t[i];
        s += d * d;
    }
    const double inv_batch = 1.0 / static_cast<double>(std::max<std::size_t>(batch, 1));
    const std::size_t ip = pred.id();
    const std::size_t it = target.id();
    return pred.tape().record(Tensor::scalar(s * inv_batch), {ip, it}, [=](Tape& tape, std::size_t self) {
        const double g = tape.incoming(self)[0];
        const auto pv = tape.value(ip).data();
        const auto tv = tape.value(it).data();
        if (tape.requires_grad(ip)) {
            auto dp = tape.grad_slot(ip);
            for (std::size_t i = 0; i < dp.size(); ++i) {
                dp[i] += 2.0 * (pv[i] - tv[i]) * inv_batch * g;
            }
        }
        if (tape.requires_grad(it)) {
            auto dt = tape.grad_slot(it);
            for (std::size_t i = 0; i < dt.size(); ++i) {
                dt[i] -= 2.0 * (pv[i] - tv[i]) * inv_batch * g;
            }
        }
    });
}

namespace testing {
void set_gelu_backward_fault(bool enabled) { g_gelu_fault.store(enabled); }
bool gelu_backward_fault() { return g_gelu_fault.load(); }
} // namespace testing

} // namespace algebraformer::ad
