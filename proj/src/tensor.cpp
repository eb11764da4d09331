#include "dahi/tensor.hpp"

#include "dahi/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace dahi {

namespace {

std::atomic<std::uint64_t> g_node_counter{0};

detail::NodePtr new_node(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    node->order = g_node_counter.fetch_add(1, std::memory_order_relaxed);
    return node;
}

const detail::Node& checked(const detail::NodePtr& node) {
    if (!node) {
        throw UsageError("use of an undefined tensor");
    }
    return *node;
}

} // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<double>& detail::Node::grad_buffer() {
    if (grad.size() != value.size()) {
        grad.assign(value.size(), 0.0);
    }
    return grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(new_node(std::move(shape), std::move(data), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).value.size(); }

std::span<const double> Tensor::values() const { return checked(node_).value; }

std::span<double> Tensor::values_mut() {
    checked(node_);
    return node_->value;
}

double Tensor::item() const {
    const auto& n = checked(node_);
    if (n.value.size() != 1) {
        throw DimensionError("item() on tensor of shape " + shape_str(n.shape));
    }
    return n.value[0];
}

double Tensor::at(std::size_t flat_index) const {
    const auto& n = checked(node_);
    if (flat_index >= n.value.size()) {
        throw IndexError("flat index " + std::to_string(flat_index) + " out of range");
    }
    return n.value[flat_index];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    checked(node_);
    node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

void Tensor::zero_grad() {
    checked(node_);
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    const auto& n = checked(node_);
    return Tensor(n.shape, n.value, false);
}

Tensor Tensor::make_result(const char* op, Shape shape, std::vector<double> data,
                           std::vector<Tensor> inputs, detail::BackwardFn backward) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            throw NumericalError(std::string("non-finite value produced by ") + op + " at flat index " +
                                 std::to_string(i));
        }
    }
    bool needs_grad = false;
    for (const auto& in : inputs) {
        needs_grad = needs_grad || in.requires_grad();
    }
    auto node = new_node(std::move(shape), std::move(data), needs_grad);
    if (needs_grad) {
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) {
            node->inputs.push_back(in.node_);
        }
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

std::vector<double>* grad_target(const Tensor& t) {
    if (!t.defined() || !t.requires_grad()) {
        return nullptr;
    }
    return &t.node()->grad_buffer();
}

void accumulate_grad(const Tensor& t, std::size_t index, double delta) {
    if (auto* g = grad_target(t)) {
        (*g)[index] += delta;
    }
}

void backward(const Tensor& loss) {
    if (!loss.defined()) {
        throw UsageError("backward on undefined tensor");
    }
    if (loss.numel() != 1) {
        throw UsageError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw UsageError("backward on a loss that does not depend on any gradient-tracking tensor");
    }

    std::vector<detail::Node*> nodes;
    std::unordered_set<const detail::Node*> seen;
    std::vector<detail::Node*> stack{loss.node().get()};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (const auto& in : n->inputs) {
            if (in->requires_grad && seen.insert(in.get()).second) {
                stack.push_back(in.get());
            }
        }
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->order > b->order; });

    for (auto* n : nodes) {
        if (!n->is_leaf()) {
            n->grad.assign(n->value.size(), 0.0);
        }
    }
    loss.node()->grad_buffer()[0] += 1.0;
    for (auto* n : nodes) {
        if (!n->is_leaf()) {
            n->backward(n->grad);
        }
    }
}

} // namespace dahi
