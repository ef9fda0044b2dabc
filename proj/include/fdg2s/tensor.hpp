#pragma once

#include <cstddef>
#include <functional>
#include <unordered_map>
#include <vector>

#include "fdg2s/error.hpp"

namespace fdg2s::ad {

// =============================================================================
// Tensor — dense row-major 64-bit float buffer
// =============================================================================

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor ones(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double v);
    static Tensor eye(std::size_t n);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    // rank <= 2 helpers
    std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
    std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

    double& at(std::size_t i) { return data_[i]; }
    double at(std::size_t i) const { return data_[i]; }
    double& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& values() const { return data_; }

    // value of a size-1 tensor
    double item() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// =============================================================================
// Tape — reverse-mode autodiff over a dynamically recorded op sequence
// =============================================================================

class Tape;

// Lightweight handle to a node on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    const Tensor& value() const;
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Gradient of the loss w.r.t. each trainable leaf, keyed by node id.
using GradMap = std::unordered_map<std::size_t, Tensor>;

class Tape {
public:
    // Backward rule: reads operand/output values from the tape, accumulates
    // into the gradient buffers.
    using BackwardFn =
        std::function<void(Tape&, const Tensor& gout, std::vector<Tensor>& grads,
                           std::vector<char>& has_grad)>;

    Var leaf(Tensor value, bool trainable = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }
    Var constant(double v) { return leaf(Tensor::scalar(v), false); }

    Var record(Tensor value, BackwardFn back);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // Reverse sweep from a scalar loss. Returns the gradient for every leaf
    // marked trainable (zeros if the leaf did not influence the loss).
    // A second call without reset() throws TapeConsumed.
    GradMap backward(const Var& loss);

    void reset();

private:
    struct Node {
        Tensor value;
        bool trainable = false;
        BackwardFn back; // empty for leaves
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

// Accumulate `g` into the gradient buffer of node `id`.
void accumulate_grad(std::vector<Tensor>& grads, std::vector<char>& has_grad,
                     std::size_t id, const Tensor& g);

// =============================================================================
// Primitive operations
// =============================================================================
// Elementwise binaries accept equal shapes or a scalar (size-1) on either
// side; no other broadcasting. All ops record onto the operands' tape and
// never mutate their inputs.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b); // throws DivisionDomain on any exact-zero denominator

Var add_scalar(Var a, double s);
Var mul_scalar(Var a, double s);

Var matmul(Var a, Var b); // rank-2 only
Var transpose(Var a);

Var concat(Var a, Var b, int axis);
Var slice(Var a, int axis, std::size_t start, std::size_t len);

Var sum_all(Var a);  // -> scalar
Var mean_all(Var a); // -> scalar
Var sum(Var a, int axis);  // rank-2, keeps a size-1 reduced axis
Var mean(Var a, int axis); // rank-2, keeps a size-1 reduced axis

Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var abs(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var softmax(Var a);      // over the last axis
Var squared_norm(Var a); // -> scalar

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

// =============================================================================
// Finite-difference oracle
// =============================================================================
// Central-difference check of an analytic gradient: returns
//   max_i |analytic_i - numeric_i| / max(|numeric_i|, 1e-6).
// Uses only forward evaluations of f, so it is independent of the backward
// rules it is used to verify. Throws NonFiniteEvaluation if f returns a
// non-finite value at any probe point.
double finite_diff_max_rel_error(const std::function<double(const Tensor&)>& f,
                                 const Tensor& x, const Tensor& analytic_grad,
                                 double step);

} // namespace fdg2s::ad
