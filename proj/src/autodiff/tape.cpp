#include <algorithm>
#include <cmath>
#include <sstream>

#include "algebraformer/autodiff.hpp"
#include "algebraformer/errors.hpp"

namespace algebraformer::ad {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? ", " : "") << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
        throw ShapeMismatch("Tensor: data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_string(shape_));
    }
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw ShapeMismatch("Tensor::item on tensor of shape " + shape_string(shape_));
    }
    return data_[0];
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    for (std::size_t in : inputs) {
        if (in >= nodes_.size()) {
            throw Error("Tape::record: input is not on this tape");
        }
        node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    }
    node.inputs = std::move(inputs);
    if (node.requires_grad) {
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
}

std::span<double> Tape::grad_slot(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.numel() != n.value.numel()) {
        n.grad = Tensor(n.value.shape(), 0.0);
    }
    return n.grad.data();
}

void Tape::accumulate(std::size_t id, std::span<const double> delta) {
    if (!nodes_.at(id).requires_grad) {
        return;
    }
    auto slot = grad_slot(id);
    if (slot.size() != delta.size()) {
        throw ShapeMismatch("Tape::accumulate: gradient size mismatch");
    }
    for (std::size_t i = 0; i < slot.size(); ++i) {
        slot[i] += delta[i];
    }
}

const Tensor& Tape::grad(std::size_t id) {
    grad_slot(id);
    return nodes_.at(id).grad;
}

void Tape::backward(Var root) {
    if (backward_done_) {
        throw Error("Tape::backward called twice without zero_grad; gradients would double");
    }
    if (root.id() >= nodes_.size() || &root.tape() != this) {
        throw Error("Tape::backward: root is not on this tape");
    }
    if (nodes_[root.id()].value.numel() != 1) {
        throw ShapeMismatch("Tape::backward: root must hold a single element");
    }
    backward_done_ = true;
    grad_slot(root.id())[0] += 1.0;
    for (std::size_t id = root.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.backward || n.grad.numel() == 0) {
            continue;
        }
        n.backward(*this, id);
    }
}

void Tape::zero_grad() {
    for (Node& n : nodes_) {
        std::fill(n.grad.storage().begin(), n.grad.storage().end(), 0.0);
    }
    backward_done_ = false;
}

double gradcheck(const ScalarFn& f, const Tensor& x, double step, GradcheckNorm norm,
                 std::span<const std::size_t> coords) {
    Tape tape;
    Var xv = tape.leaf(x);
    Var y = f(tape, xv);
    tape.backward(y);
    const Tensor analytic = tape.grad(xv.id());

    auto eval = [&](const Tensor& at) {
        Tape t;
        return f(t, t.leaf(at, false)).value().item();
    };

    double worst = 0.0;
    double max_diff = 0.0;
    double max_ad = 0.0;
    double max_fd = 0.0;
    Tensor probe = x;
    const std::size_t count = coords.empty() ? x.numel() : coords.size();
    for (std::size_t c = 0; c < count; ++c) {
        const std::size_t i = coords.empty() ? c : coords[c];
        if (i >= x.numel()) {
            throw ShapeMismatch("gradcheck: coordinate out of range");
        }
        const double orig = probe[i];
        probe[i] = orig + step;
        const double fp = eval(probe);
        probe[i] = orig - step;
        const double fm = eval(probe);
        probe[i] = orig;
        const double numeric = (fp - fm) / (2.0 * step);
        max_diff = std::max(max_diff, std::abs(analytic[i] - numeric));
        max_ad = std::max(max_ad, std::abs(analytic[i]));
        max_fd = std::max(max_fd, std::abs(numeric));
        const double err = std::abs(analytic[i] - numeric) /
                           (std::abs(analytic[i]) + std::abs(numeric) + 1e-8);
        worst = std::max(worst, err);
    }
    if (norm == GradcheckNorm::Normwise) {
        return max_diff / (max_ad + max_fd + 1e-8);
    }
    return worst;
}

} // namespace algebraformer::ad
