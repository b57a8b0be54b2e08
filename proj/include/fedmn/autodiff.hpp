// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedmn/common.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace fedmn {

/// A trainable tensor: value plus an accumulated gradient of identical shape,
/// addressed by a stable name so parameters can be matched across model
/// copies by identity rather than by position.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v)
        : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(); }
    Eigen::Index size() const { return value.size(); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid until Tape::clear().
struct Var {
    Tape* tape = nullptr;
    int index = -1;

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode tape over dense matrices. Nodes are created in evaluation
/// order; backward() walks them in reverse. Each backward() call runs a fresh
/// internal pass and then adds leaf gradients into their Parameters, so
/// calling backward twice without a zero_grad doubles the accumulated grads.
class Tape {
public:
    Var constant(Matrix v);
    Var leaf(Parameter& p);

    /// Backpropagate from a 1x1 scalar node.
    void backward(Var root);

    void clear();
    std::size_t size() const { return nodes_.size(); }

    // Internal node access (used by the op free functions below).
    struct Node {
        Matrix value;
        Matrix grad;
        std::function<void(Tape&)> backprop;  // pulls this node's grad into its parents
        Parameter* param = nullptr;
    };
    Node& node(int i) { return nodes_[static_cast<std::size_t>(i)]; }
    const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
    Var emplace(Matrix value, std::function<void(Tape&)> backprop = nullptr);

private:
    std::vector<Node> nodes_;
};

// ---- graph ops -------------------------------------------------------------

/// a (n x k) times b (k x m). Throws ShapeError naming both shapes.
Var matmul(Var a, Var b);

/// Elementwise sum of two same-shape nodes.
Var add(Var a, Var b);

/// a (n x d) plus a row vector (1 x d) broadcast over rows.
Var add_rowwise(Var a, Var row);

/// x*w + b with b broadcast over rows; the dense-layer primitive.
Var affine(Var x, Var w, Var b);

Var scale(Var a, double s);
Var add_const(Var a, const Matrix& c);

/// a (n x d) times a scalar node s (1 x 1).
Var mul_scalar(Var a, Var s);

/// a (n x d) divided by a scalar node s (1 x 1).
Var div_scalar(Var a, Var s);

/// a divided by a plain double (no gradient into the divisor).
Var div_const(Var a, double d);

Var relu(Var a);
Var sigmoid(Var a);

/// log(p / (1 - p)), elementwise; inputs must lie strictly in (0, 1).
Var logit(Var a);

/// Single entry (0, i) of a row vector as a 1x1 node.
Var slice_entry(Var a, Eigen::Index i);

/// Mean over rows: (n x d) -> (1 x d).
Var mean_rows(Var a);

/// Sum of all entries -> 1x1.
Var sum_all(Var a);

Var concat_cols(Var a, Var b);

/// Rows scaled to unit L2 norm (norm floored at 1e-12).
Var row_l2_normalize(Var a);

/// Mean over the batch of softmax cross-entropy against one-hot target rows.
/// Throws DataError on a row that is not exactly one-hot.
Var softmax_cross_entropy(Var logits, const Matrix& one_hot_targets);

// ---- optimizer -------------------------------------------------------------

/// value <- value - lr * grad for every parameter; gradients are left intact.
void sgd_step(const std::vector<Parameter*>& params, double learning_rate);

void zero_grad(const std::vector<Parameter*>& params);

}  // namespace fedmn
