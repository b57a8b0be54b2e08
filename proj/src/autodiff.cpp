// SPDX-License-Identifier: Apache-2.0
#include "fedmn/autodiff.hpp"

#include <cmath>

namespace fedmn {

const Matrix& Var::value() const { return tape->node(index).value; }

Var Tape::emplace(Matrix value, std::function<void(Tape&)> backprop) {
    Node n;
    n.value = std::move(value);
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix v) { return emplace(std::move(v)); }

Var Tape::leaf(Parameter& p) {
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols())
        p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
    Var v = emplace(p.value);
    nodes_.back().param = &p;
    return v;
}

void Tape::backward(Var root) {
    if (root.tape != this) throw std::logic_error("backward: node belongs to another tape");
    const Node& r = node(root.index);
    if (r.value.rows() != 1 || r.value.cols() != 1)
        throw ShapeError("backward: root must be 1x1, got " + shape_str(r.value));

    for (auto& n : nodes_) n.grad.setZero();
    nodes_[static_cast<std::size_t>(root.index)].grad(0, 0) = 1.0;

    for (int i = root.index; i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (n.backprop) n.backprop(*this);
    }
    for (auto& n : nodes_) {
        if (n.param) n.param->grad += n.grad;
    }
}

void Tape::clear() { nodes_.clear(); }

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
    if (a.tape != b.tape || a.tape == nullptr)
        throw std::logic_error(std::string(op) + ": operands on different tapes");
    return *a.tape;
}

int next_index(const Tape& t) { return static_cast<int>(t.size()); }

}  // namespace

Var matmul(Var a, Var b) {
    Tape& t = same_tape(a, b, "matmul");
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.cols() != bv.rows())
        throw ShapeError("matmul: incompatible shapes " + shape_str(av) + " and " + shape_str(bv));
    const int self = next_index(t), ai = a.index, bi = b.index;
    return t.emplace(av * bv, [self, ai, bi](Tape& tp) {
        const Matrix& g = tp.node(self).grad;
        tp.node(ai).grad.noalias() += g * tp.node(bi).value.transpose();
        tp.node(bi).grad.noalias() += tp.node(ai).value.transpose() * g;
    });
}

Var add(Var a, Var b) {
    Tape& t = same_tape(a, b, "add");
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.rows() != bv.rows() || av.cols() != bv.cols())
        throw ShapeError("add: incompatible shapes " + shape_str(av) + " and " + shape_str(bv));
    const int self = next_index(t), ai = a.index, bi = b.index;
    return t.emplace(av + bv, [self, ai, bi](Tape& tp) {
        tp.node(ai).grad += tp.node(self).grad;
        tp.node(bi).grad += tp.node(self).grad;
    });
}

Var add_rowwise(Var a, Var row) {
    Tape& t = same_tape(a, row, "add_rowwise");
    const Matrix& av = a.value();
    const Matrix& rv = row.value();
    if (rv.rows() != 1 || rv.cols() != av.cols())
        throw ShapeError("add_rowwise: incompatible shapes " + shape_str(av) + " and " +
                         shape_str(rv));
    const int self = next_index(t), ai = a.index, ri = row.index;
    return t.emplace(av.rowwise() + rv.row(0), [self, ai, ri](Tape& tp) {
        const Matrix& g = tp.node(self).grad;
        tp.node(ai).grad += g;
        tp.node(ri).grad += g.colwise().sum();
    });
}

Var affine(Var x, Var w, Var b) { return add_rowwise(matmul(x, w), b); }

Var scale(Var a, double s) {
    Tape& t = *a.tape;
    const int self = next_index(t), ai = a.index;
    return t.emplace(a.value() * s, [self, ai, s](Tape& tp) {
        tp.node(ai).grad += tp.node(self).grad * s;
    });
}

Var add_const(Var a, const Matrix& c) {
    Tape& t = *a.tape;
    const Matrix& av = a.value();
    if (av.rows() != c.rows() || av.cols() != c.cols())
        throw ShapeError("add_const: incompatible shapes " + shape_str(av) + " and " +
                         shape_str(c));
    const int self = next_index(t), ai = a.index;
    return t.emplace(av + c, [self, ai](Tape& tp) {
        tp.node(ai).grad += tp.node(self).grad;
    });
}

Var mul_scalar(Var a, Var s) {
    Tape& t = same_tape(a, s, "mul_scalar");
    const Matrix& sv = s.value();
    if (sv.rows() != 1 || sv.cols() != 1)
        throw ShapeError("mul_scalar: scalar operand has shape " + shape_str(sv));
    const int self = next_index(t), ai = a.index, si = s.index;
    return t.emplace(a.value() * sv(0, 0), [self, ai, si](Tape& tp) {
        const Matrix& g = tp.node(self).grad;
        tp.node(ai).grad += g * tp.node(si).value(0, 0);
        tp.node(si).grad(0, 0) += (g.array() * tp.node(ai).value.array()).sum();
    });
}

Var div_scalar(Var a, Var s) {
    Tape& t = same_tape(a, s, "div_scalar");
    const Matrix& sv = s.value();
    if (sv.rows() != 1 || sv.cols() != 1)
        throw ShapeError("div_scalar: scalar operand has shape " + shape_str(sv));
    const double d = sv(0, 0);
    const int self = next_index(t), ai = a.index, si = s.index;
    return t.emplace(a.value() / d, [self, ai, si](Tape& tp) {
        const Matrix& g = tp.node(self).grad;
        const double dv = tp.node(si).value(0, 0);
        tp.node(ai).grad += g / dv;
        tp.node(si).grad(0, 0) -=
            (g.array() * tp.node(ai).value.array()).sum() / (dv * dv);
    });
}

Var div_const(Var a, double d) {
    Tape& t = *a.tape;
    const int self = next_index(t), ai = a.index;
    return t.emplace(a.value() / d, [self, ai, d](Tape& tp) {
        tp.node(ai).grad += tp.node(self).grad / d;
    });
}

Var relu(Var a) {
    Tape& t = *a.tape;
    const int self = next_index(t), ai = a.index;
    return t.emplace(a.value().cwiseMax(0.0), [self, ai](Tape& tp) {
        const Matrix& g = tp.node(self).grad;
        const Matrix& v = tp.node(ai).value;
        // derivative at exactly 0 is 0
        tp.node(ai).grad.array() += g.array() * (v.array() > 0.0).cast<double>();
    });
}

Var sigmoid(Var a) {
    Tape& t = *a.tape;
    Matrix s = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    const int self = next_index(t), ai = a.index;
    return t.emplace(std::move(s), [self, ai](Tape& tp) {
        const Matrix& g = tp.node(self).grad;
        const Matrix& sv = tp.node(self).value;
        tp.node(ai).grad.array() += g.array() * sv.array() * (1.0 - sv.array());
    });
}

Var logit(Var a) {
    Tape& t = *a.tape;
    const Matrix& av = a.value();
    if ((av.array() <= 0.0).any() || (av.array() >= 1.0).any())
        throw DataError("logit: input has entries outside the open interval (0,1)");
    Matrix v = (av.array().log() - (1.0 - av.array()).log()).matrix();
    const int self = next_index(t), ai = a.index;
    return t.emplace(std::move(v), [self, ai](Tape& tp) {
        const Matrix& g = tp.node(self).grad;
        const auto& av2 = tp.node(ai).value.array();
        tp.node(ai).grad.array() += g.array() / (av2 * (1.0 - av2));
    });
}

Var slice_entry(Var a, Eigen::Index i) {
    Tape& t = *a.tape;
    const Matrix& av = a.value();
    if (av.rows() != 1 || i < 0 || i >= av.cols())
        throw ShapeError("slice_entry: index " + std::to_string(i) + " out of range for " +
                         shape_str(av));
    Matrix v(1, 1);
    v(0, 0) = av(0, i);
    const int self = next_index(t), ai = a.index;
    return t.emplace(std::move(v), [self, ai, i](Tape& tp) {
        tp.node(ai).grad(0, i) += tp.node(self).grad(0, 0);
    });
}

Var mean_rows(Var a) {
    Tape& t = *a.tape;
    const Matrix& av = a.value();
    const double n = static_cast<double>(av.rows());
    const int self = next_index(t), ai = a.index;
    return t.emplace(av.colwise().mean(), [self, ai, n](Tape& tp) {
        const Matrix& g = tp.node(self).grad;  // 1 x d
        tp.node(ai).grad += (Matrix::Ones(tp.node(ai).value.rows(), 1) * g) / n;
    });
}

Var sum_all(Var a) {
    Tape& t = *a.tape;
    Matrix v(1, 1);
    v(0, 0) = a.value().sum();
    const int self = next_index(t), ai = a.index;
    return t.emplace(std::move(v), [self, ai](Tape& tp) {
        tp.node(ai).grad.array() += tp.node(self).grad(0, 0);
    });
}

Var concat_cols(Var a, Var b) {
    Tape& t = same_tape(a, b, "concat_cols");
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.rows() != bv.rows())
        throw ShapeError("concat_cols: incompatible shapes " + shape_str(av) + " and " +
                         shape_str(bv));
    Matrix v(av.rows(), av.cols() + bv.cols());
    v << av, bv;
    const int self = next_index(t), ai = a.index, bi = b.index;
    const Eigen::Index ac = av.cols(), bc = bv.cols();
    return t.emplace(std::move(v), [self, ai, bi, ac, bc](Tape& tp) {
        const Matrix& g = tp.node(self).grad;
        tp.node(ai).grad += g.leftCols(ac);
        tp.node(bi).grad += g.rightCols(bc);
    });
}

Var row_l2_normalize(Var a) {
    Tape& t = *a.tape;
    const Matrix& av = a.value();
    constexpr double kNormFloor = 1e-12;
    Vector norms = av.rowwise().norm().cwiseMax(kNormFloor);
    Matrix v = av.array().colwise() / norms.array();
    const int self = next_index(t), ai = a.index;
    return t.emplace(std::move(v), [self, ai, norms](Tape& tp) {
        const Matrix& g = tp.node(self).grad;
        const Matrix& y = tp.node(self).value;  // normalized rows
        Matrix& ga = tp.node(ai).grad;
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            const double dot = y.row(r).dot(g.row(r));
            ga.row(r) += (g.row(r) - y.row(r) * dot) / norms(r);
        }
    });
}

Var softmax_cross_entropy(Var logits, const Matrix& one_hot_targets) {
    Tape& t = *logits.tape;
    const Matrix& lv = logits.value();
    if (lv.rows() != one_hot_targets.rows() || lv.cols() != one_hot_targets.cols())
        throw ShapeError("softmax_cross_entropy: logits " + shape_str(lv) + " vs targets " +
                         shape_str(one_hot_targets));
    for (Eigen::Index r = 0; r < one_hot_targets.rows(); ++r) {
        int ones = 0;
        for (Eigen::Index c = 0; c < one_hot_targets.cols(); ++c) {
            const double v = one_hot_targets(r, c);
            if (v == 1.0)
                ++ones;
            else if (v != 0.0)
                throw DataError("softmax_cross_entropy: target row " + std::to_string(r) +
                                " is not one-hot");
        }
        if (ones != 1)
            throw DataError("softmax_cross_entropy: target row " + std::to_string(r) +
                            " is not one-hot");
    }

    const Eigen::Index n = lv.rows();
    Matrix softmax(lv.rows(), lv.cols());
    double loss = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
        const double mx = lv.row(r).maxCoeff();
        Eigen::ArrayXd e = (lv.row(r).array() - mx).exp();
        const double z = e.sum();
        softmax.row(r) = (e / z).matrix();
        const double lse = mx + std::log(z);
        loss += lse - lv.row(r).dot(one_hot_targets.row(r));
    }
    Matrix v(1, 1);
    v(0, 0) = loss / static_cast<double>(n);

    const int self = next_index(t), li = logits.index;
    Matrix delta = (softmax - one_hot_targets) / static_cast<double>(n);
    return t.emplace(std::move(v), [self, li, delta](Tape& tp) {
        tp.node(li).grad += delta * tp.node(self).grad(0, 0);
    });
}

void sgd_step(const std::vector<Parameter*>& params, double learning_rate) {
    if (!(learning_rate > 0.0))
        throw ConfigError("sgd_step: learning rate must be positive, got " +
                          std::to_string(learning_rate));
    for (Parameter* p : params) {
        if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols())
            throw ShapeError("sgd_step: parameter '" + p->name + "' grad " + shape_str(p->grad) +
                             " vs value " + shape_str(p->value));
        p->value -= learning_rate * p->grad;
    }
}

void zero_grad(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->zero_grad();
}

}  // namespace fedmn
