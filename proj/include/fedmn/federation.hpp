// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedmn/config.hpp"
#include "fedmn/datagen.hpp"
#include "fedmn/decision.hpp"
#include "fedmn/hypernetwork.hpp"
#include "fedmn/modular_network.hpp"
#include "fedmn/pool.hpp"

#include <functional>
#include <optional>

namespace fedmn {

struct ClientState {
    int id = 0;
    int cluster = -1;
    Matrix train_x;
    Matrix test_x;
    std::vector<int> train_y;
    std::vector<int> test_y;
    Matrix train_onehot;
    ModulePool pool;
    Vector probs;                    // last routing probabilities
    DecisionVector decision;         // last hard decision
    std::vector<std::uint8_t> mask;  // active blocks under `decision`
    double last_loss = 0.0;          // sample-weighted mean loss, last local epoch
};

/// What a client ships to the server: parameter values for the encoders and
/// for the active blocks only, plus the activity mask that defines them.
struct UploadPayload {
    int client = 0;
    std::int64_t samples = 0;
    std::vector<std::uint8_t> mask;
    std::vector<std::vector<Matrix>> encoders;
    std::vector<std::optional<std::vector<Matrix>>> blocks;  // layer-major, absent = inactive
    std::vector<Matrix> hyp;  // empty when the hypernetwork is not shipped
    std::int64_t param_count = 0;
};

struct RoundMetrics {
    int round = 0;  // 1-based across pretraining and training
    std::string phase;
    double tau = 0.0;
    double global_loss = 0.0;
    double acc_mean = 0.0;
    double acc_median = 0.0;
    std::vector<double> client_acc;
    std::vector<std::int64_t> up;
    std::vector<std::int64_t> down;
    std::int64_t up_total = 0;
    std::int64_t down_total = 0;
    std::int64_t cumulative = 0;
    std::vector<std::string> decisions;  // per-client bitstrings, fedmn only
};

struct TrainResult {
    ArchitectureSpec spec;
    ModulePool global;
    std::vector<ClientState> clients;
    std::vector<RoundMetrics> rounds;
    std::int64_t cumulative = 0;
};

// ---- payload accounting (parameter scalars, derivable from dims alone) -----

std::int64_t encoder_param_count(const ArchitectureSpec& spec);
std::int64_t full_model_param_count(const ArchitectureSpec& spec);
std::int64_t hypernet_param_count(const ArchitectureSpec& spec, const HypernetDims& dims);

/// Encoders + the blocks flagged in `mask` (+ the hypernetwork when counted).
std::int64_t payload_param_count(const ArchitectureSpec& spec,
                                 const std::vector<std::uint8_t>& mask, bool include_hyp,
                                 const HypernetDims& dims);

// ---- deterministic per-(client, round, epoch) streams -----------------------

Rng batch_stream(std::uint64_t seed, int client, int global_round, int epoch);
Rng noise_stream(std::uint64_t seed, int client, int global_round, int epoch);

// ---- round mechanics --------------------------------------------------------

ClientState make_client(int id, const ClientData& data, const ModulePool& global, int classes);

/// Snapshot of the client's current parameters for upload. `ship_hyp`
/// controls whether hypernetwork values travel; `count_hyp` whether they are
/// charged to the ledger.
UploadPayload make_payload(const ClientState& c, const std::vector<std::uint8_t>& mask,
                           bool ship_hyp, bool count_hyp);

/// Server-to-client copy: all encoders, active blocks per `mask` (all blocks
/// when mask is null), hypernetwork when `ship_hyp`.
void apply_download(ClientState& c, const ModulePool& global,
                    const std::vector<std::uint8_t>* mask, bool ship_hyp);

/// One client round of the routed model: per epoch, fresh concrete noise and
/// a fresh batch order; per batch, the relaxed decision is re-derived from
/// the current hypernetwork and gradients flow end to end. Finishes by
/// hardening the final relaxed decision into the upload mask.
UploadPayload local_update(ClientState& c, const ExperimentConfig& cfg, int train_round,
                           int global_round, const TemperatureSchedule& sched);

/// Dense local round (every block active, no routing). `encoders_only`
/// freezes everything but the encoders, used for pretraining.
UploadPayload local_update_dense(ClientState& c, const ExperimentConfig& cfg, int global_round,
                                 bool encoders_only);

/// Sample-size-weighted block-wise aggregation. A block's update averages
/// only the clients that uploaded it; with Aggregation::renormalized the
/// weights are rescaled to sum to one over those clients, with literal they
/// are not. Blocks nobody uploaded keep their previous value. Payload order
/// does not affect the result.
ModulePool aggregate(const std::vector<UploadPayload>& payloads, const ModulePool& previous,
                     Aggregation mode);

/// Full simulation for cfg.method over the dataset. `on_round` fires after
/// each completed round, in order.
TrainResult run_training(const ExperimentConfig& cfg, const FederatedDataset& data,
                         const std::function<void(const RoundMetrics&)>& on_round = {});

}  // namespace fedmn
