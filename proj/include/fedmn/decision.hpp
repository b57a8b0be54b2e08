// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedmn/architecture.hpp"

#include <cstdint>

namespace fedmn {

/// Length-path_count gate vector in the canonical layout. Relaxed entries lie
/// in [0,1]; hard entries are exactly 0 or 1.
struct DecisionVector {
    Vector values;
    bool hard = false;
};

DecisionVector all_ones_decision(const ArchitectureSpec& spec);

/// Thresholds a relaxed decision at 0.5 (strict: 0.5 maps to 0).
DecisionVector harden(const DecisionVector& relaxed);

/// '0'/'1' string in canonical gate order; requires hard mode.
std::string to_bitstring(const DecisionVector& hard);

/// Connection matrix for the pair (l-1, l), l in 2..L: shape n_l x n_{l-1},
/// C(j, k) = gate from source block k to destination block j.
Matrix connection_matrix(const ArchitectureSpec& spec, const Vector& gates, int l);

/// The final n_L gates, one per last-layer block.
Vector output_gates(const ArchitectureSpec& spec, const Vector& gates);

/// Length-B activity mask over blocks in layers 2..L, layer-major.
/// A block is active iff it is reachable from the encoders through gates
/// that are 1; encoders are always active sources. Requires hard mode.
std::vector<std::uint8_t> active_mask(const ArchitectureSpec& spec, const DecisionVector& v);

}  // namespace fedmn
