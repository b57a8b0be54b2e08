// SPDX-License-Identifier: Apache-2.0
#include "fedmn/federation.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace fedmn {

namespace {

constexpr std::uint64_t kTagNoise = 0x4E01;
constexpr std::uint64_t kTagBatch = 0xBA7C;

std::uint64_t round_epoch_key(int global_round, int epoch) {
    return static_cast<std::uint64_t>(global_round) * 8192u + static_cast<std::uint64_t>(epoch);
}

std::int64_t affine_scalars(int in, int out) {
    return static_cast<std::int64_t>(in) * out + out;
}

std::int64_t block_scalars(int in, int hidden, int out) {
    if (hidden == 0) return affine_scalars(in, out);
    return affine_scalars(in, hidden) + affine_scalars(hidden, out);
}

std::vector<Matrix> param_values(const Block& b) {
    std::vector<Matrix> out;
    out.reserve(b.params.size());
    for (const Parameter& p : b.params) out.push_back(p.value);
    return out;
}

void assign_values(Block& b, const std::vector<Matrix>& vals, const std::string& what) {
    if (vals.size() != b.params.size())
        throw ShapeError(what + ": expected " + std::to_string(b.params.size()) +
                         " tensors, got " + std::to_string(vals.size()));
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (vals[i].rows() != b.params[i].value.rows() || vals[i].cols() != b.params[i].value.cols())
            throw ShapeError(b.params[i].name + ": shape " + shape_str(b.params[i].value) +
                             " vs " + shape_str(vals[i]));
        b.params[i].value = vals[i];
    }
}

Vector sigmoid_row(const Matrix& row) {
    Vector out(row.cols());
    for (Eigen::Index i = 0; i < row.cols(); ++i) out(i) = 1.0 / (1.0 + std::exp(-row(0, i)));
    return out;
}

Matrix take_rows(const Matrix& x, const std::vector<int>& order, Eigen::Index b0,
                 Eigen::Index b1) {
    Matrix out(b1 - b0, x.cols());
    for (Eigen::Index r = b0; r < b1; ++r) out.row(r - b0) = x.row(order[static_cast<std::size_t>(r)]);
    return out;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n == 0) return 0.0;
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void finish_round(RoundMetrics& rm, std::int64_t& cumulative) {
    rm.up_total = 0;
    rm.down_total = 0;
    for (std::int64_t v : rm.up) rm.up_total += v;
    for (std::int64_t v : rm.down) rm.down_total += v;
    cumulative += rm.up_total + rm.down_total;
    rm.cumulative = cumulative;
    rm.acc_mean = 0.0;
    for (double a : rm.client_acc) rm.acc_mean += a;
    if (!rm.client_acc.empty()) rm.acc_mean /= static_cast<double>(rm.client_acc.size());
    rm.acc_median = median_of(rm.client_acc);
}

double weighted_loss(const std::vector<ClientState>& clients) {
    double total = 0.0, loss = 0.0;
    for (const ClientState& c : clients) total += static_cast<double>(c.train_x.rows());
    for (const ClientState& c : clients)
        loss += (static_cast<double>(c.train_x.rows()) / total) * c.last_loss;
    return loss;
}

/// Shared SGD epoch loop; builds the forward graph per batch via `make_loss`
/// and steps `step_params`. Returns the last epoch's sample-weighted loss.
template <typename MakeLoss>
double run_epochs(ClientState& c, const ExperimentConfig& cfg, int global_round,
                  const std::vector<Parameter*>& step_params, MakeLoss make_loss) {
    const Eigen::Index n = c.train_x.rows();
    std::vector<Parameter*> all = c.pool.all_params();
    double last_epoch_loss = 0.0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng batch_rng = batch_stream(cfg.seed, c.id, global_round, epoch);
        std::vector<int> perm = batch_rng.permutation(static_cast<int>(n));
        double loss_sum = 0.0;
        for (Eigen::Index b0 = 0; b0 < n; b0 += cfg.batch_size) {
            const Eigen::Index b1 = std::min<Eigen::Index>(n, b0 + cfg.batch_size);
            Matrix xb = take_rows(c.train_x, perm, b0, b1);
            Matrix yb = take_rows(c.train_onehot, perm, b0, b1);
            Tape t;
            Var loss = make_loss(t, xb, yb, epoch);
            t.backward(loss);
            if (cfg.lr > 0.0) sgd_step(step_params, cfg.lr);
            zero_grad(all);
            loss_sum += loss.value()(0, 0) * static_cast<double>(b1 - b0);
        }
        last_epoch_loss = loss_sum / static_cast<double>(n);
    }
    return last_epoch_loss;
}

}  // namespace

Rng batch_stream(std::uint64_t seed, int client, int global_round, int epoch) {
    return Rng(derive_seed(seed, kTagBatch, static_cast<std::uint64_t>(client),
                           round_epoch_key(global_round, epoch)));
}

Rng noise_stream(std::uint64_t seed, int client, int global_round, int epoch) {
    return Rng(derive_seed(seed, kTagNoise, static_cast<std::uint64_t>(client),
                           round_epoch_key(global_round, epoch)));
}

std::int64_t encoder_param_count(const ArchitectureSpec& spec) {
    return spec.width(1) * affine_scalars(spec.input_dim, spec.encoder_out_dim);
}

std::int64_t full_model_param_count(const ArchitectureSpec& spec) {
    std::int64_t total = encoder_param_count(spec);
    for (int l = 2; l <= spec.layers(); ++l)
        total += spec.width(l) *
                 block_scalars(block_in_dim(spec, l), spec.block_hidden_dim, block_out_dim_at(spec, l));
    return total;
}

std::int64_t hypernet_param_count(const ArchitectureSpec& spec, const HypernetDims& dims) {
    return block_scalars(spec.input_dim, dims.hidden, dims.dx) +
           affine_scalars(spec.num_classes, dims.dy) +
           affine_scalars(dims.dx + dims.dy, path_count(spec));
}

std::int64_t payload_param_count(const ArchitectureSpec& spec,
                                 const std::vector<std::uint8_t>& mask, bool include_hyp,
                                 const HypernetDims& dims) {
    if (static_cast<int>(mask.size()) != block_count(spec))
        throw ShapeError("mask length " + std::to_string(mask.size()) + " != block count " +
                         std::to_string(block_count(spec)));
    std::int64_t total = encoder_param_count(spec);
    for (int l = 2; l <= spec.layers(); ++l)
        for (int j = 0; j < spec.width(l); ++j)
            if (mask[static_cast<std::size_t>(block_flat_index(spec, l, j))])
                total += block_scalars(block_in_dim(spec, l), spec.block_hidden_dim,
                                       block_out_dim_at(spec, l));
    if (include_hyp) total += hypernet_param_count(spec, dims);
    return total;
}

ClientState make_client(int id, const ClientData& data, const ModulePool& global, int classes) {
    ClientState c;
    c.id = id;
    c.cluster = data.cluster;
    c.train_x = data.train_x;
    c.test_x = data.test_x;
    c.train_y = data.train_y;
    c.test_y = data.test_y;
    c.train_onehot = one_hot(data.train_y, classes);
    c.pool = global;
    c.decision = all_ones_decision(global.spec);
    c.mask.assign(static_cast<std::size_t>(block_count(global.spec)), 1);
    c.probs = Vector::Constant(path_count(global.spec), 0.5);
    return c;
}

UploadPayload make_payload(const ClientState& c, const std::vector<std::uint8_t>& mask,
                           bool ship_hyp, bool count_hyp) {
    const ModulePool& pool = c.pool;
    const ArchitectureSpec& spec = pool.spec;
    if (static_cast<int>(mask.size()) != block_count(spec))
        throw ShapeError("payload mask length " + std::to_string(mask.size()) +
                         " != block count " + std::to_string(block_count(spec)));
    UploadPayload u;
    u.client = c.id;
    u.samples = c.train_x.rows();
    u.mask = mask;
    for (const Block& e : pool.encoders) u.encoders.push_back(param_values(e));
    for (int l = 2; l <= spec.layers(); ++l)
        for (int j = 0; j < spec.width(l); ++j) {
            if (mask[static_cast<std::size_t>(block_flat_index(spec, l, j))])
                u.blocks.emplace_back(param_values(pool.block_at(l, j)));
            else
                u.blocks.emplace_back(std::nullopt);
        }
    if (ship_hyp) {
        for (const Matrix& m : param_values(pool.hyp.fx)) u.hyp.push_back(m);
        for (const Matrix& m : param_values(pool.hyp.fy)) u.hyp.push_back(m);
        for (const Matrix& m : param_values(pool.hyp.head)) u.hyp.push_back(m);
    }
    u.param_count = payload_param_count(spec, mask, count_hyp, pool.hyp.dims);
    return u;
}

void apply_download(ClientState& c, const ModulePool& global,
                    const std::vector<std::uint8_t>* mask, bool ship_hyp) {
    const ArchitectureSpec& spec = global.spec;
    if (mask && static_cast<int>(mask->size()) != block_count(spec))
        throw ShapeError("download mask length " + std::to_string(mask->size()) +
                         " != block count " + std::to_string(block_count(spec)));
    for (std::size_t e = 0; e < global.encoders.size(); ++e)
        assign_values(c.pool.encoders[e], param_values(global.encoders[e]), "encoder download");
    for (int l = 2; l <= spec.layers(); ++l)
        for (int j = 0; j < spec.width(l); ++j) {
            if (mask && !(*mask)[static_cast<std::size_t>(block_flat_index(spec, l, j))]) continue;
            assign_values(c.pool.block_at(l, j), param_values(global.block_at(l, j)),
                          "block download");
        }
    if (ship_hyp) {
        assign_values(c.pool.hyp.fx, param_values(global.hyp.fx), "hyp download");
        assign_values(c.pool.hyp.fy, param_values(global.hyp.fy), "hyp download");
        assign_values(c.pool.hyp.head, param_values(global.hyp.head), "hyp download");
    }
}

UploadPayload local_update(ClientState& c, const ExperimentConfig& cfg, int train_round,
                           int global_round, const TemperatureSchedule& sched) {
    const ArchitectureSpec& spec = c.pool.spec;
    const double tau = temperature(train_round, sched);
    const Eigen::Index num_paths = path_count(spec);
    if (c.train_x.rows() == 0) throw DataError("client " + std::to_string(c.id) + " has no training data");

    std::vector<Parameter*> step_params = c.pool.all_params();
    c.last_loss = run_epochs(
        c, cfg, global_round, step_params,
        [&](Tape& t, const Matrix& xb, const Matrix& yb, int epoch) {
            Rng noise_rng = noise_stream(cfg.seed, c.id, global_round, epoch);
            Vector eps = draw_epsilon(num_paths, noise_rng);
            Var g = joint_embedding_var(t, c.train_x, c.train_onehot, c.pool.hyp);
            Var v = sample_from_logits_var(g, eps, tau);
            Vector pi = sigmoid_row(g.value());
            ForwardOptions opt;
            opt.allow_fallback = cfg.allow_fallback;
            opt.probs = &pi;
            Var logits = forward_relaxed(t, xb, c.pool, v, opt);
            return softmax_cross_entropy(logits, yb);
        });

    // Final decision: threshold the trained routing probabilities. Noise only
    // drives the training-time samples, so the shipped architecture is a
    // deterministic function of the data and the hypernetwork.
    c.probs = routing_probs(c.train_x, c.train_onehot, c.pool.hyp);
    c.decision = harden(DecisionVector{c.probs, false});
    c.mask = active_mask(spec, c.decision);
    return make_payload(c, c.mask, true, cfg.ledger_include_hypernet);
}

UploadPayload local_update_dense(ClientState& c, const ExperimentConfig& cfg, int global_round,
                                 bool encoders_only) {
    const ArchitectureSpec& spec = c.pool.spec;
    if (c.train_x.rows() == 0) throw DataError("client " + std::to_string(c.id) + " has no training data");
    DecisionVector ones = all_ones_decision(spec);
    std::vector<Parameter*> step_params =
        encoders_only ? c.pool.encoder_params() : c.pool.model_params();
    c.last_loss = run_epochs(c, cfg, global_round, step_params,
                             [&](Tape& t, const Matrix& xb, const Matrix& yb, int) {
                                 Var logits = forward_hard(t, xb, c.pool, ones);
                                 return softmax_cross_entropy(logits, yb);
                             });
    c.decision = ones;
    c.mask.assign(static_cast<std::size_t>(block_count(spec)), 1);
    c.probs = Vector::Constant(path_count(spec), 0.5);
    return make_payload(c, c.mask, false, false);
}

ModulePool aggregate(const std::vector<UploadPayload>& payloads, const ModulePool& previous,
                     Aggregation mode) {
    ModulePool result = previous;
    if (payloads.empty()) return result;
    const ArchitectureSpec& spec = previous.spec;
    const int num_blocks = block_count(spec);

    std::vector<const UploadPayload*> order;
    order.reserve(payloads.size());
    for (const UploadPayload& p : payloads) order.push_back(&p);
    std::sort(order.begin(), order.end(),
              [](const UploadPayload* a, const UploadPayload* b) { return a->client < b->client; });

    double total = 0.0;
    for (const UploadPayload* p : order) {
        if (p->samples <= 0) throw DataError("payload from client " + std::to_string(p->client) +
                                             " reports no samples");
        if (static_cast<int>(p->mask.size()) != num_blocks ||
            p->encoders.size() != previous.encoders.size() ||
            static_cast<int>(p->blocks.size()) != num_blocks)
            throw ShapeError("payload from client " + std::to_string(p->client) +
                             " does not match the architecture");
        total += static_cast<double>(p->samples);
    }
    auto weight = [&](const UploadPayload* p) { return static_cast<double>(p->samples) / total; };

    // Encoders: every client ships them, so both modes average with weights
    // summing to one over the uploaders.
    for (std::size_t e = 0; e < result.encoders.size(); ++e) {
        std::vector<Matrix> acc;
        for (const UploadPayload* p : order) {
            const std::vector<Matrix>& vals = p->encoders[e];
            if (acc.empty()) {
                for (const Matrix& m : vals) acc.push_back(weight(p) * m);
            } else {
                for (std::size_t i = 0; i < vals.size(); ++i) acc[i] += weight(p) * vals[i];
            }
        }
        assign_values(result.encoders[e], acc, "encoder aggregate");
    }

    for (int l = 2; l <= spec.layers(); ++l)
        for (int j = 0; j < spec.width(l); ++j) {
            const std::size_t flat = static_cast<std::size_t>(block_flat_index(spec, l, j));
            std::vector<Matrix> acc;
            double wsum = 0.0;
            for (const UploadPayload* p : order) {
                if (!p->mask[flat]) continue;
                if (!p->blocks[flat])
                    throw DataError("payload from client " + std::to_string(p->client) +
                                    " flags a block active but ships no values");
                const std::vector<Matrix>& vals = *p->blocks[flat];
                const double w = weight(p);
                wsum += w;
                if (acc.empty()) {
                    for (const Matrix& m : vals) acc.push_back(w * m);
                } else {
                    for (std::size_t i = 0; i < vals.size(); ++i) acc[i] += w * vals[i];
                }
            }
            if (acc.empty()) continue;  // nobody uploaded it: keep the previous value
            if (mode == Aggregation::renormalized)
                for (Matrix& m : acc) m /= wsum;
            assign_values(result.block_at(l, j), acc, "block aggregate");
        }

    std::vector<const UploadPayload*> hyp_uploaders;
    for (const UploadPayload* p : order)
        if (!p->hyp.empty()) hyp_uploaders.push_back(p);
    if (!hyp_uploaders.empty()) {
        std::vector<Matrix> acc;
        double wsum = 0.0;
        for (const UploadPayload* p : hyp_uploaders) {
            const double w = weight(p);
            wsum += w;
            if (acc.empty()) {
                for (const Matrix& m : p->hyp) acc.push_back(w * m);
            } else {
                if (p->hyp.size() != acc.size())
                    throw ShapeError("hypernetwork payload from client " +
                                     std::to_string(p->client) + " has wrong tensor count");
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * p->hyp[i];
            }
        }
        if (mode == Aggregation::renormalized)
            for (Matrix& m : acc) m /= wsum;
        const std::size_t nfx = result.hyp.fx.params.size();
        const std::size_t nfy = result.hyp.fy.params.size();
        const std::size_t nhead = result.hyp.head.params.size();
        if (acc.size() != nfx + nfy + nhead)
            throw ShapeError("hypernetwork payload has wrong tensor count");
        assign_values(result.hyp.fx, {acc.begin(), acc.begin() + nfx}, "hyp aggregate");
        assign_values(result.hyp.fy, {acc.begin() + nfx, acc.begin() + nfx + nfy}, "hyp aggregate");
        assign_values(result.hyp.head, {acc.begin() + nfx + nfy, acc.end()}, "hyp aggregate");
    }
    result.version = previous.version + 1;
    return result;
}

TrainResult run_training(const ExperimentConfig& cfg, const FederatedDataset& data,
                         const std::function<void(const RoundMetrics&)>& on_round) {
    require_valid(cfg);

    ArchitectureSpec spec;
    spec.layer_widths = cfg.arch;
    spec.input_dim = cfg.input_dim;
    spec.encoder_out_dim = cfg.encoder_out;
    spec.block_hidden_dim = cfg.block_hidden;
    spec.block_out_dim = cfg.block_out;
    spec.num_classes = cfg.classes;
    HypernetDims dims{cfg.hyp_dx, cfg.hyp_dy, cfg.hyp_hidden};

    TrainResult res;
    res.spec = spec;
    res.global = init_pool(spec, dims, cfg.seed);

    for (std::size_t i = 0; i < data.clients.size(); ++i) {
        if (data.clients[i].train_x.rows() == 0) {
            std::cerr << "warning: client " << i << " has no training data, skipping\n";
            continue;
        }
        res.clients.push_back(make_client(static_cast<int>(i), data.clients[i], res.global,
                                          cfg.classes));
    }
    if (res.clients.empty()) throw DataError("no clients with training data");

    TemperatureSchedule sched{cfg.tau_start, cfg.tau_end, cfg.rounds};
    const std::int64_t full_count = full_model_param_count(spec);
    const std::vector<std::uint8_t> all_active(static_cast<std::size_t>(block_count(spec)), 1);
    std::int64_t cumulative = 0;
    int global_round = 0;

    const bool is_fedmn = cfg.method == Method::fedmn;
    const int pretrain = is_fedmn ? cfg.pretrain_rounds : 0;

    for (int p = 1; p <= pretrain; ++p) {
        ++global_round;
        RoundMetrics rm;
        rm.round = global_round;
        rm.phase = "pretrain";
        std::vector<UploadPayload> payloads;
        for (ClientState& c : res.clients) {
            apply_download(c, res.global, nullptr, false);
            rm.down.push_back(full_count);
            payloads.push_back(local_update_dense(c, cfg, global_round, true));
            rm.up.push_back(payloads.back().param_count);
        }
        res.global = aggregate(payloads, res.global, cfg.aggregation);
        DecisionVector ones = all_ones_decision(spec);
        for (ClientState& c : res.clients)
            rm.client_acc.push_back(accuracy(res.global, c.test_x, c.test_y, ones));
        rm.global_loss = weighted_loss(res.clients);
        finish_round(rm, cumulative);
        res.rounds.push_back(std::move(rm));
        if (on_round) on_round(res.rounds.back());
    }

    for (int t = 1; t <= cfg.rounds; ++t) {
        ++global_round;
        RoundMetrics rm;
        rm.round = global_round;
        rm.phase = "train";
        if (is_fedmn) {
            rm.tau = temperature(t, sched);
            std::vector<UploadPayload> payloads;
            for (ClientState& c : res.clients) {
                // Route with the stale hypernetwork to pick what to download.
                Vector pi_pre = routing_probs(c.train_x, c.train_onehot, c.pool.hyp);
                DecisionVector v_dl = harden(DecisionVector{pi_pre, false});
                std::vector<std::uint8_t> mask_dl = active_mask(spec, v_dl);
                const bool full = global_round == 1;
                apply_download(c, res.global, full ? nullptr : &mask_dl, true);
                rm.down.push_back(payload_param_count(spec, full ? all_active : mask_dl,
                                                      cfg.ledger_include_hypernet, dims));
                payloads.push_back(local_update(c, cfg, t, global_round, sched));
                rm.up.push_back(payloads.back().param_count);
                rm.decisions.push_back(to_bitstring(c.decision));
            }
            res.global = aggregate(payloads, res.global, cfg.aggregation);
            for (ClientState& c : res.clients) {
                ForwardOptions opt;
                opt.allow_fallback = cfg.allow_fallback;
                opt.probs = &c.probs;
                rm.client_acc.push_back(accuracy(c.pool, c.test_x, c.test_y, c.decision, opt));
            }
        } else if (cfg.method == Method::fedavg) {
            std::vector<UploadPayload> payloads;
            for (ClientState& c : res.clients) {
                apply_download(c, res.global, nullptr, false);
                rm.down.push_back(full_count);
                payloads.push_back(local_update_dense(c, cfg, global_round, false));
                rm.up.push_back(payloads.back().param_count);
            }
            res.global = aggregate(payloads, res.global, cfg.aggregation);
            DecisionVector ones = all_ones_decision(spec);
            for (ClientState& c : res.clients)
                rm.client_acc.push_back(accuracy(res.global, c.test_x, c.test_y, ones));
        } else {
            DecisionVector ones = all_ones_decision(spec);
            for (ClientState& c : res.clients) {
                local_update_dense(c, cfg, global_round, false);
                rm.up.push_back(0);
                rm.down.push_back(0);
                rm.client_acc.push_back(accuracy(c.pool, c.test_x, c.test_y, ones));
            }
        }
        rm.global_loss = weighted_loss(res.clients);
        finish_round(rm, cumulative);
        res.rounds.push_back(std::move(rm));
        if (on_round) on_round(res.rounds.back());
    }

    res.cumulative = cumulative;
    return res;
}

}  // namespace fedmn
