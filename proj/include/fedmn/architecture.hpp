// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedmn/common.hpp"

namespace fedmn {

/// Layer widths plus the dense-layer dimensions of the assembled model.
/// layer_widths = [n_1..n_L]: n_1 encoders, then L-1 layers of module blocks.
struct ArchitectureSpec {
    std::vector<int> layer_widths;
    int input_dim = 20;
    int encoder_out_dim = 32;
    int block_hidden_dim = 256;  // 0 means a single affine layer per block
    int block_out_dim = 32;
    int num_classes = 5;

    int layers() const { return static_cast<int>(layer_widths.size()); }
    /// Width of layer l, 1-based.
    int width(int l) const { return layer_widths[static_cast<std::size_t>(l - 1)]; }
};

/// Parses "n_1xn_2x...xn_L", e.g. "1x4x3".
std::vector<int> parse_layer_widths(const std::string& s);

std::string layer_widths_string(const std::vector<int>& widths);

/// Throws ConfigError listing every violated constraint.
void validate(const ArchitectureSpec& spec);

/// Number of path gates: sum over adjacent layer pairs of n_j * n_{j+1},
/// plus n_L output gates.
int path_count(const ArchitectureSpec& spec);

/// Number of module blocks (encoders excluded): n_2 + ... + n_L.
int block_count(const ArchitectureSpec& spec);

// ---- canonical gate layout --------------------------------------------------
// A decision vector stores gates layer-pair by layer-pair, source-major within
// a pair, then the n_L output gates last.

/// Offset of the gates for the pair (l, l+1), l in 1..L-1.
int pair_gate_offset(const ArchitectureSpec& spec, int l);

/// Index of the gate from block k of layer l to block j of layer l+1
/// (k, j both 0-based).
int gate_index(const ArchitectureSpec& spec, int l, int k, int j);

/// Offset of the n_L output gates.
int output_gate_offset(const ArchitectureSpec& spec);

/// Flat index of block j (0-based) of layer l (2..L) within a length-B mask,
/// layer-major.
int block_flat_index(const ArchitectureSpec& spec, int l, int j);

/// Input width of a block in layer l (2..L).
int block_in_dim(const ArchitectureSpec& spec, int l);

/// Output width of a block in layer l: num_classes at the last layer,
/// block_out_dim otherwise.
int block_out_dim_at(const ArchitectureSpec& spec, int l);

}  // namespace fedmn
