// SPDX-License-Identifier: Apache-2.0
#include "fedmn/modular_network.hpp"

namespace fedmn {

Var block_forward(Tape& t, Block& b, Var in) {
    if (in.cols() != b.in_dim)
        throw ShapeError("block_forward: input " + shape_str(in.value()) + " does not match " +
                         b.params[0].name + " fan-in " + std::to_string(b.in_dim));
    if (b.hidden_dim == 0) return affine(in, t.leaf(b.params[0]), t.leaf(b.params[1]));
    Var h = relu(affine(in, t.leaf(b.params[0]), t.leaf(b.params[1])));
    return affine(h, t.leaf(b.params[2]), t.leaf(b.params[3]));
}

std::vector<Var> encode(Tape& t, const Matrix& x, ModulePool& pool) {
    if (x.cols() != pool.spec.input_dim)
        throw ShapeError("encode: input " + shape_str(x) + " does not match input_dim " +
                         std::to_string(pool.spec.input_dim));
    std::vector<Var> z;
    Var xv = t.constant(x);
    for (auto& enc : pool.encoders) z.push_back(relu(block_forward(t, enc, xv)));
    return z;
}

Var gated_input(Tape& t, const std::vector<Var>& upstream, const std::vector<double>& gates,
                double threshold) {
    if (upstream.size() != gates.size())
        throw ShapeError("gated_input: " + std::to_string(upstream.size()) + " upstream outputs vs " +
                         std::to_string(gates.size()) + " gates");
    double den = 0.0;
    for (double g : gates) den += g;
    if (!(den > threshold))
        return t.constant(Matrix::Zero(upstream[0].rows(), upstream[0].cols()));
    bool have = false;
    Var num;
    for (std::size_t k = 0; k < gates.size(); ++k) {
        if (gates[k] == 0.0) continue;
        Var term = gates[k] == 1.0 ? upstream[k] : scale(upstream[k], gates[k]);
        num = have ? add(num, term) : term;
        have = true;
    }
    return div_const(num, den);
}

Var gated_input(Tape& t, const std::vector<Var>& upstream, const std::vector<Var>& gates,
                double threshold) {
    if (upstream.size() != gates.size())
        throw ShapeError("gated_input: " + std::to_string(upstream.size()) + " upstream outputs vs " +
                         std::to_string(gates.size()) + " gates");
    Var den = gates[0];
    for (std::size_t k = 1; k < gates.size(); ++k) den = add(den, gates[k]);
    if (!(den.value()(0, 0) > threshold))
        return t.constant(Matrix::Zero(upstream[0].rows(), upstream[0].cols()));
    Var num = mul_scalar(upstream[0], gates[0]);
    for (std::size_t k = 1; k < gates.size(); ++k)
        num = add(num, mul_scalar(upstream[k], gates[k]));
    return div_scalar(num, den);
}

namespace {

int fallback_pick(const ArchitectureSpec& spec, const ForwardOptions& opt) {
    if (!opt.allow_fallback)
        throw DataError("forward: no active output path and fallback is disabled");
    if (opt.probs == nullptr)
        throw DataError("forward: no active output path and no routing probabilities for fallback");
    const int off = output_gate_offset(spec);
    const int nl = spec.width(spec.layers());
    int best = 0;
    for (int i = 1; i < nl; ++i)
        if ((*opt.probs)(off + i) > (*opt.probs)(off + best)) best = i;
    return best;
}

}  // namespace

Var forward_relaxed(Tape& t, const Matrix& x, ModulePool& pool, Var gates_row,
                    const ForwardOptions& opt) {
    const ArchitectureSpec& spec = pool.spec;
    if (gates_row.rows() != 1 || gates_row.cols() != path_count(spec))
        throw ShapeError("forward_relaxed: gate row " + shape_str(gates_row.value()) +
                         " does not match path count " + std::to_string(path_count(spec)));

    std::vector<Var> prev = encode(t, x, pool);
    for (int l = 2; l <= spec.layers(); ++l) {
        std::vector<Var> outs;
        for (int j = 0; j < spec.width(l); ++j) {
            std::vector<Var> g;
            for (int k = 0; k < spec.width(l - 1); ++k)
                g.push_back(slice_entry(gates_row, gate_index(spec, l - 1, k, j)));
            Var in = gated_input(t, prev, g, opt.gate_threshold);
            outs.push_back(block_forward(t, pool.block_at(l, j), in));
        }
        prev = std::move(outs);
    }

    const int off = output_gate_offset(spec);
    const int nl = spec.width(spec.layers());
    std::vector<Var> og;
    for (int i = 0; i < nl; ++i) og.push_back(slice_entry(gates_row, off + i));
    Var den = og[0];
    for (int i = 1; i < nl; ++i) den = add(den, og[i]);
    if (den.value()(0, 0) > opt.gate_threshold) {
        Var num = mul_scalar(prev[0], og[0]);
        for (int i = 1; i < nl; ++i) num = add(num, mul_scalar(prev[i], og[i]));
        return div_scalar(num, den);
    }
    return prev[static_cast<std::size_t>(fallback_pick(spec, opt))];
}

Var forward_hard(Tape& t, const Matrix& x, ModulePool& pool, const DecisionVector& v,
                 const ForwardOptions& opt) {
    const ArchitectureSpec& spec = pool.spec;
    if (!v.hard) throw DataError("forward_hard: decision is not hard");
    if (v.values.size() != path_count(spec))
        throw ShapeError("forward_hard: decision length " + std::to_string(v.values.size()) +
                         " does not match path count " + std::to_string(path_count(spec)));

    const auto act = active_mask(spec, v);
    auto source_active = [&](int l, int k) {
        return l == 1 ? true : act[static_cast<std::size_t>(block_flat_index(spec, l, k))] != 0;
    };

    std::vector<Var> prev = encode(t, x, pool);
    for (int l = 2; l <= spec.layers(); ++l) {
        std::vector<Var> outs;
        for (int j = 0; j < spec.width(l); ++j) {
            std::vector<double> g;
            for (int k = 0; k < spec.width(l - 1); ++k)
                g.push_back(source_active(l - 1, k) ? v.values(gate_index(spec, l - 1, k, j))
                                                    : 0.0);
            Var in = gated_input(t, prev, g, opt.gate_threshold);
            outs.push_back(block_forward(t, pool.block_at(l, j), in));
        }
        prev = std::move(outs);
    }

    const int off = output_gate_offset(spec);
    const int nl = spec.width(spec.layers());
    const int L = spec.layers();
    double den = 0.0;
    std::vector<double> og(static_cast<std::size_t>(nl), 0.0);
    for (int i = 0; i < nl; ++i) {
        og[static_cast<std::size_t>(i)] = source_active(L, i) ? v.values(off + i) : 0.0;
        den += og[static_cast<std::size_t>(i)];
    }
    if (den > opt.gate_threshold) {
        bool have = false;
        Var num;
        for (int i = 0; i < nl; ++i) {
            if (og[static_cast<std::size_t>(i)] == 0.0) continue;
            Var term = og[static_cast<std::size_t>(i)] == 1.0
                           ? prev[static_cast<std::size_t>(i)]
                           : scale(prev[static_cast<std::size_t>(i)], og[static_cast<std::size_t>(i)]);
            num = have ? add(num, term) : term;
            have = true;
        }
        return div_const(num, den);
    }
    return prev[static_cast<std::size_t>(fallback_pick(spec, opt))];
}

Matrix predict_hard(ModulePool& pool, const Matrix& x, const DecisionVector& v,
                    const ForwardOptions& opt) {
    Tape t;
    return forward_hard(t, x, pool, v, opt).value();
}

std::vector<int> argmax_rows(const Matrix& logits) {
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        int best = 0;
        for (Eigen::Index c3 = 1; c3 < logits.cols(); ++c3)
            if (logits(r, c3) > logits(r, best)) best = static_cast<int>(c3);
        out[static_cast<std::size_t>(r)] = best;
    }
    return out;
}

double accuracy(ModulePool& pool, const Matrix& x, const std::vector<int>& y,
                const DecisionVector& v, const ForwardOptions& opt) {
    if (x.rows() == 0) throw DataError("accuracy: empty input");
    const auto pred = argmax_rows(predict_hard(pool, x, v, opt));
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == y[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace fedmn
