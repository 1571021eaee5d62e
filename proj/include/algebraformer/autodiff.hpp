#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace algebraformer::ad {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major tensor of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double item() const;
    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    const Tensor& value() const;
    const Tensor& grad() const;
    const Shape& shape() const { return value().shape(); }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Records operations in execution order and replays their adjoints in
/// exact reverse order. One tape per forward pass.
class Tape {
public:
    /// Propagates the node's gradient into its inputs.
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Appends a node; inputs must already be on this tape.
    Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

    /// Seeds d(root)/d(root) = 1 for a single-element root and runs the
    /// adjoints. Throws if called again before zero_grad().
    void backward(Var root);

    /// Clears every gradient slot and re-arms backward().
    void zero_grad();

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    /// Gradient of a node; a zero tensor of matching shape if none arrived.
    const Tensor& grad(std::size_t id);
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

    /// Sum `delta` into the gradient slot of `id` (allocating on first use).
    void accumulate(std::size_t id, std::span<const double> delta);
    /// Mutable gradient slot, allocated and zeroed on first use.
    std::span<double> grad_slot(std::size_t id);
    /// Gradient of `id` as seen by its backward function (may be empty).
    std::span<const double> incoming(std::size_t id) const { return nodes_.at(id).grad.data(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// Operations. Shapes must agree exactly except where noted; a mismatch
// throws ShapeMismatch.

/// a[..., M, K] x b[K, N] (shared weight) or a[..., M, K] x b[..., K, N]
/// with identical leading dimensions.
Var matmul(Var a, Var b);
/// Same shape, or b's shape equal to the trailing dimensions of a (bias or
/// positional add broadcast over leading axes).
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product of equally shaped tensors.
Var mul(Var a, Var b);
Var mul_scalar(Var a, double s);
/// Swaps the last two axes.
Var transpose(Var a);
Var reshape(Var a, Shape shape);
/// First `count` entries along axis 0.
Var slice_rows(Var a, std::size_t count);
/// [B, T, H*Dh] -> [B, H, T, Dh]
Var split_heads(Var a, std::size_t heads);
/// [B, H, T, Dh] -> [B, T, H*Dh]
Var merge_heads(Var a);
/// Sets entries above the diagonal of the last two axes to -inf.
Var causal_mask(Var a);
Var sum(Var a);

Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var softmax_last_axis(Var x);
/// Exact x * Phi(x).
Var gelu(Var x);
/// Sum over the last axis of (pred - target)^2, averaged over the leading
/// (batch) axes; rank-1 inputs are a batch of one.
Var mse_loss(Var pred, Var target);

double gelu_value(double x);
double gelu_derivative(double x);

/// Builds a scalar function on a fresh tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

enum class GradcheckNorm {
    /// max_i |g_ad,i - g_fd,i| / (|g_ad,i| + |g_fd,i| + 1e-8)
    PerCoordinate,
    /// max_i |g_ad,i - g_fd,i| / (max_i |g_ad,i| + max_i |g_fd,i| + 1e-8); for
    /// large tensors where some true gradients sit below finite-difference
    /// resolution.
    Normwise,
};

/// Relative error between the tape gradient and central differences. When
/// `coords` is nonempty only those flat indices are probed.
double gradcheck(const ScalarFn& f, const Tensor& x, double step = 1e-6,
                 GradcheckNorm norm = GradcheckNorm::PerCoordinate, std::span<const std::size_t> coords = {});

namespace testing {
/// Flips the sign of the GELU adjoint; lets the gradcheck harness prove it
/// catches a broken backward.
void set_gelu_backward_fault(bool enabled);
bool gelu_backward_fault();
} // namespace testing

} // namespace algebraformer::ad
