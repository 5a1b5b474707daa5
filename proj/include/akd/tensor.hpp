#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Ops that see at least
// one input with requires_grad record their inputs and a backward closure;
// the graph is rebuilt on every forward pass and consumed by one backward().

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "akd/errors.hpp"

namespace akd {

class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<std::size_t> dims);
    explicit Shape(std::vector<std::size_t> dims);

    std::size_t rank() const { return dims_.size(); }
    std::size_t operator[](std::size_t i) const { return dims_.at(i); }
    std::size_t numel() const;
    const std::vector<std::size_t>& dims() const { return dims_; }
    std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;

private:
    std::vector<std::size_t> dims_;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until a gradient arrives
    bool requires_grad = false;
    bool backward_done = false;
    std::string op = "leaf";
    std::vector<NodePtr> inputs;
    BackwardFn backward;

    void accumulate(std::span<const double> g);
    std::vector<double>& grad_buffer();
};

class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(const Shape& s, bool requires_grad = false);
    static Tensor ones(const Shape& s, bool requires_grad = false);
    static Tensor full(const Shape& s, double v, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    // Builds a recorded op node. Inputs that do not require grad are not retained.
    static Tensor from_op(std::string op, Shape shape, std::vector<double> values,
                          std::vector<Tensor> inputs, BackwardFn backward);

    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    std::span<const double> values() const { return node_->value; }
    std::span<double> mutable_values() { return node_->value; }
    double operator[](std::size_t i) const { return node_->value[i]; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    // Fresh leaf with copied values and no history.
    Tensor detach() const;
    Tensor clone(bool requires_grad) const;

    const Node& node() const { return *node_; }
    Node& node() { return *node_; }
    const NodePtr& node_ptr() const { return node_; }

private:
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}
    NodePtr node_;
};

// Topologically ordered record of the differentiable ops reachable from a root.
class Tape {
public:
    explicit Tape(const Tensor& root);
    const std::vector<Node*>& nodes() const { return order_; }
    void backward();

private:
    Node* root_;
    std::vector<Node*> order_;
};

void backward(const Tensor& loss);

// Elementwise. Binary ops broadcast right-aligned (each dim equal or 1).
enum class ElementwiseKind { add, sub, mul, div, scale, relu, exp, log, square };

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b);
Tensor elementwise(ElementwiseKind kind, const Tensor& a, double b = 0.0);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride = 1, int padding = 0);
Tensor reshape(const Tensor& a, const Shape& s);

using Axes = std::vector<std::size_t>;

Tensor softmax(const Tensor& x, const Axes& axes);
Tensor log_softmax(const Tensor& x, const Axes& axes);

enum class ReduceKind { sum, mean, var_population };
// Reductions keep reduced axes with extent 1. Empty axes means all axes.
Tensor reduce(const Tensor& x, ReduceKind kind, const Axes& axes = {});
Tensor sum(const Tensor& x, const Axes& axes = {});
Tensor mean(const Tensor& x, const Axes& axes = {});

Shape broadcast_shape(const Shape& a, const Shape& b);

// Maps each element of `shape` to its slot in the keep-dims reduced shape.
struct AxisGrouping {
    Shape reduced;
    std::vector<std::size_t> group_of;
    std::size_t group_size = 1;
};
AxisGrouping group_axes(const Shape& shape, const Axes& axes);

// Max over elements of |analytic - central| / max(1, |central|), with
// per-element step h * max(1, |x_i|). f must rebuild its graph per call.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-6);

}  // namespace akd
