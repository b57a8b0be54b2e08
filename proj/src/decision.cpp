// SPDX-License-Identifier: Apache-2.0
#include "fedmn/decision.hpp"

namespace fedmn {

DecisionVector all_ones_decision(const ArchitectureSpec& spec) {
    DecisionVector v;
    v.values = Vector::Ones(path_count(spec));
    v.hard = true;
    return v;
}

DecisionVector harden(const DecisionVector& relaxed) {
    DecisionVector out;
    out.values = (relaxed.values.array() > 0.5).cast<double>();
    out.hard = true;
    return out;
}

std::string to_bitstring(const DecisionVector& v) {
    if (!v.hard) throw DataError("to_bitstring: decision is not hard");
    std::string s(static_cast<std::size_t>(v.values.size()), '0');
    for (Eigen::Index i = 0; i < v.values.size(); ++i)
        if (v.values(i) == 1.0) s[static_cast<std::size_t>(i)] = '1';
    return s;
}

Matrix connection_matrix(const ArchitectureSpec& spec, const Vector& gates, int l) {
    if (gates.size() != path_count(spec))
        throw ShapeError("connection_matrix: gate vector length " + std::to_string(gates.size()) +
                         " does not match path count " + std::to_string(path_count(spec)));
    const int rows = spec.width(l);
    const int cols = spec.width(l - 1);
    Matrix c(rows, cols);
    for (int k = 0; k < cols; ++k)
        for (int j = 0; j < rows; ++j) c(j, k) = gates(gate_index(spec, l - 1, k, j));
    return c;
}

Vector output_gates(const ArchitectureSpec& spec, const Vector& gates) {
    if (gates.size() != path_count(spec))
        throw ShapeError("output_gates: gate vector length " + std::to_string(gates.size()) +
                         " does not match path count " + std::to_string(path_count(spec)));
    return gates.segment(output_gate_offset(spec), spec.width(spec.layers()));
}

std::vector<std::uint8_t> active_mask(const ArchitectureSpec& spec, const DecisionVector& v) {
    if (!v.hard) throw DataError("active_mask: decision is not hard");
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(block_count(spec)), 0);
    std::vector<std::uint8_t> prev(static_cast<std::size_t>(spec.width(1)), 1);  // encoders
    for (int l = 2; l <= spec.layers(); ++l) {
        const Matrix c = connection_matrix(spec, v.values, l);
        std::vector<std::uint8_t> cur(static_cast<std::size_t>(spec.width(l)), 0);
        for (int j = 0; j < spec.width(l); ++j)
            for (int k = 0; k < spec.width(l - 1); ++k)
                if (c(j, k) == 1.0 && prev[static_cast<std::size_t>(k)]) {
                    cur[static_cast<std::size_t>(j)] = 1;
                    break;
                }
        for (int j = 0; j < spec.width(l); ++j)
            mask[static_cast<std::size_t>(block_flat_index(spec, l, j))] =
                cur[static_cast<std::size_t>(j)];
        prev = cur;
    }
    return mask;
}

}  // namespace fedmn
