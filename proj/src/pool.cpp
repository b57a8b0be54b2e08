// SPDX-License-Identifier: Apache-2.0
#include "fedmn/pool.hpp"

namespace fedmn {

namespace {

constexpr double kLabelEmbedGain = 4.0;
constexpr double kRoutingHeadGain = 48.0;

Matrix init_weight(int in_dim, int out_dim, Rng& rng) {
    Matrix w(in_dim, out_dim);
    const double s = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = s * rng.normal();
    return w;
}

}  // namespace

Block make_block(const std::string& prefix, int in_dim, int hidden_dim, int out_dim, Rng& rng) {
    Block b;
    b.in_dim = in_dim;
    b.hidden_dim = hidden_dim;
    b.out_dim = out_dim;
    if (hidden_dim == 0) {
        b.params.emplace_back(prefix + ".w", init_weight(in_dim, out_dim, rng));
        b.params.emplace_back(prefix + ".b", Matrix::Zero(1, out_dim));
    } else {
        b.params.emplace_back(prefix + ".w1", init_weight(in_dim, hidden_dim, rng));
        b.params.emplace_back(prefix + ".b1", Matrix::Zero(1, hidden_dim));
        b.params.emplace_back(prefix + ".w2", init_weight(hidden_dim, out_dim, rng));
        b.params.emplace_back(prefix + ".b2", Matrix::Zero(1, out_dim));
    }
    return b;
}

std::vector<Parameter*> ModulePool::encoder_params() {
    std::vector<Parameter*> out;
    for (auto& e : encoders)
        for (auto& p : e.params) out.push_back(&p);
    return out;
}

std::vector<Parameter*> ModulePool::model_params() {
    std::vector<Parameter*> out = encoder_params();
    for (auto& layer : block_layers)
        for (auto& b : layer)
            for (auto& p : b.params) out.push_back(&p);
    return out;
}

std::vector<Parameter*> ModulePool::hyp_params() {
    std::vector<Parameter*> out;
    for (auto* blk : {&hyp.fx, &hyp.fy, &hyp.head})
        for (auto& p : blk->params) out.push_back(&p);
    return out;
}

std::vector<Parameter*> ModulePool::all_params() {
    std::vector<Parameter*> out = model_params();
    for (auto* p : hyp_params()) out.push_back(p);
    return out;
}

Eigen::Index ModulePool::encoder_param_count() const {
    Eigen::Index n = 0;
    for (const auto& e : encoders) n += e.param_count();
    return n;
}

Eigen::Index ModulePool::model_param_count() const {
    Eigen::Index n = encoder_param_count();
    for (const auto& layer : block_layers)
        for (const auto& b : layer) n += b.param_count();
    return n;
}

Eigen::Index ModulePool::hyp_param_count() const {
    return hyp.fx.param_count() + hyp.fy.param_count() + hyp.head.param_count();
}

ModulePool init_pool(const ArchitectureSpec& spec, const HypernetDims& hyp_dims,
                     std::uint64_t seed) {
    validate(spec);
    if (hyp_dims.dx < 1 || hyp_dims.dy < 1 || hyp_dims.hidden < 1)
        throw ConfigError("hypernetwork dims must be >= 1");

    ModulePool pool;
    pool.spec = spec;
    Rng rng(derive_seed(seed, 0x1417));

    for (int j = 0; j < spec.width(1); ++j)
        pool.encoders.push_back(
            make_block("enc" + std::to_string(j), spec.input_dim, 0, spec.encoder_out_dim, rng));

    for (int l = 2; l <= spec.layers(); ++l) {
        std::vector<Block> layer;
        for (int j = 0; j < spec.width(l); ++j)
            layer.push_back(make_block("blk" + std::to_string(l) + "." + std::to_string(j),
                                       block_in_dim(spec, l), spec.block_hidden_dim,
                                       block_out_dim_at(spec, l), rng));
        pool.block_layers.push_back(std::move(layer));
    }

    pool.hyp.dims = hyp_dims;
    pool.hyp.fx = make_block("hyp.fx", spec.input_dim, hyp_dims.hidden, hyp_dims.dx, rng);
    pool.hyp.fy = make_block("hyp.fy", spec.num_classes, 0, hyp_dims.dy, rng);
    // Label embeddings start several times larger than feature embeddings so
    // the per-sample normalization does not drown the label-side signal, which
    // is what separates clients whose inputs look alike but are labeled
    // differently.
    pool.hyp.fy.params[0].value *= kLabelEmbedGain;
    pool.hyp.head = make_block("hyp.head", hyp_dims.dx + hyp_dims.dy, 0, path_count(spec), rng);
    // The head sees unit-norm embeddings, so a standard init would put every
    // routing probability near 0.5 and short runs never commit to a route.
    // Widening the head makes the initial routing decisive while staying a
    // deterministic function of the data.
    pool.hyp.head.params[0].value *= kRoutingHeadGain;
    return pool;
}

}  // namespace fedmn
