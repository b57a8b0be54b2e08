// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedmn/decision.hpp"
#include "fedmn/pool.hpp"

namespace fedmn {

struct ForwardOptions {
    double gate_threshold = 1e-6;
    bool allow_fallback = true;
    /// Routing probabilities backing the fallback pick (highest output-gate
    /// probability wins, lowest index on ties). Required if fallback can fire.
    const Vector* probs = nullptr;
};

/// One module's forward pass: affine, or affine -> relu -> affine.
Var block_forward(Tape& t, Block& b, Var in);

/// Encoder outputs z^(1)..z^(n_1), each relu(affine(x)).
std::vector<Var> encode(Tape& t, const Matrix& x, ModulePool& pool);

/// Gate-weighted mean of upstream outputs: (sum_k g_k u_k) / (sum_k g_k) when
/// the gate sum exceeds `threshold`, else zero. Hard overload takes plain
/// gates; the relaxed overload takes gate nodes so gradients reach them.
Var gated_input(Tape& t, const std::vector<Var>& upstream, const std::vector<double>& gates,
                double threshold);
Var gated_input(Tape& t, const std::vector<Var>& upstream, const std::vector<Var>& gates,
                double threshold);

/// Forward pass with a relaxed decision row (1 x path_count node on `t`).
/// Every gate weights its path per the gated-mean rule; differentiable in the
/// gates and all parameters.
Var forward_relaxed(Tape& t, const Matrix& x, ModulePool& pool, Var gates_row,
                    const ForwardOptions& opt = {});

/// Forward pass with a hard decision. Gates into a block are masked by the
/// source block's activity (recursive reachability), so parameters of
/// inactive blocks cannot influence the output. Throws DataError when no
/// output path survives and fallback is disabled or no probs are given.
Var forward_hard(Tape& t, const Matrix& x, ModulePool& pool, const DecisionVector& v,
                 const ForwardOptions& opt = {});

/// Convenience: logits for a hard decision on a fresh private tape.
Matrix predict_hard(ModulePool& pool, const Matrix& x, const DecisionVector& v,
                    const ForwardOptions& opt = {});

/// argmax per row, lowest index on ties.
std::vector<int> argmax_rows(const Matrix& logits);

double accuracy(ModulePool& pool, const Matrix& x, const std::vector<int>& y,
                const DecisionVector& v, const ForwardOptions& opt = {});

}  // namespace fedmn
