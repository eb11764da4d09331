#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dahi {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(std::span<const double> grad_out)>;

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::uint64_t order = 0;
    std::vector<NodePtr> inputs;
    BackwardFn backward;

    bool is_leaf() const { return !backward; }
    // Sizes the gradient buffer on first use.
    std::vector<double>& grad_buffer();
};

} // namespace detail

/// Dense row-major tensor of doubles with optional reverse-mode gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage and graph node.
/// Values produced by ops record their inputs and a backward rule; calling
/// `backward(loss)` visits the recorded nodes in reverse creation order.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> values() const;
    /// Direct write access; intended for parameter initialization and optimizer steps.
    std::span<double> values_mut();
    double item() const;
    double at(std::size_t flat_index) const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    /// Fresh leaf holding a copy of the values, outside any graph.
    Tensor detach() const;
    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    /// Creates an op result. Checks finiteness and wires the backward rule only when
    /// some input requires a gradient.
    static Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                              std::vector<Tensor> inputs, detail::BackwardFn backward);

    const detail::NodePtr& node() const { return node_; }

private:
    explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
    detail::NodePtr node_;
};

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across calls;
/// intermediate gradients are reset at the start of each sweep.
void backward(const Tensor& loss);

/// Adds `delta` into the gradient of `t` if it tracks gradients.
void accumulate_grad(const Tensor& t, std::size_t index, double delta);
std::vector<double>* grad_target(const Tensor& t);

} // namespace dahi
