// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedmn/architecture.hpp"
#include "fedmn/autodiff.hpp"

namespace fedmn {

/// One dense module: a single affine layer when hidden_dim == 0, otherwise
/// affine -> relu -> affine. Parameters are named <prefix>.w/.b or
/// <prefix>.w1/.b1/.w2/.b2 so copies can be matched by identity.
struct Block {
    int in_dim = 0;
    int hidden_dim = 0;
    int out_dim = 0;
    std::vector<Parameter> params;

    Eigen::Index param_count() const {
        Eigen::Index n = 0;
        for (const auto& p : params) n += p.size();
        return n;
    }
};

/// Weights ~ N(0, 1/fan_in), biases zero.
Block make_block(const std::string& prefix, int in_dim, int hidden_dim, int out_dim, Rng& rng);

struct HypernetDims {
    int dx = 32;
    int dy = 32;
    int hidden = 64;  // width of the feature map's hidden layer
};

/// Routing hypernetwork parameters: feature map fx (input -> dx), label map
/// fy (one-hot -> dy), and the head over the concatenated embedding.
struct Hypernet {
    HypernetDims dims;
    Block fx;
    Block fy;
    Block head;  // (dx + dy) -> path_count
};

/// All trainable state for one architecture: n_1 encoders, module blocks for
/// layers 2..L, and the hypernetwork.
struct ModulePool {
    ArchitectureSpec spec;
    std::vector<Block> encoders;
    std::vector<std::vector<Block>> block_layers;  // [0] holds layer 2
    Hypernet hyp;
    int version = 0;

    Block& block_at(int l, int j) { return block_layers[static_cast<std::size_t>(l - 2)][static_cast<std::size_t>(j)]; }
    const Block& block_at(int l, int j) const {
        return block_layers[static_cast<std::size_t>(l - 2)][static_cast<std::size_t>(j)];
    }

    std::vector<Parameter*> encoder_params();
    std::vector<Parameter*> model_params();  // encoders + blocks
    std::vector<Parameter*> hyp_params();
    std::vector<Parameter*> all_params();

    Eigen::Index encoder_param_count() const;
    Eigen::Index block_param_count(int l, int j) const { return block_at(l, j).param_count(); }
    Eigen::Index model_param_count() const;  // encoders + all blocks
    Eigen::Index hyp_param_count() const;
};

ModulePool init_pool(const ArchitectureSpec& spec, const HypernetDims& hyp_dims,
                     std::uint64_t seed);

}  // namespace fedmn
