// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedmn/common.hpp"

namespace fedmn {

enum class Method { fedmn, fedavg, local_only };
enum class Aggregation { renormalized, literal };
enum class DataSource { synth, manifest };
enum class ShiftKind { label_permutation, boundary_rotation, none };

std::string to_string(Method m);
std::string to_string(Aggregation a);
std::string to_string(DataSource d);
std::string to_string(ShiftKind s);

struct ExperimentConfig {
    Method method = Method::fedmn;
    std::vector<int> arch = {1, 4, 3};
    int input_dim = 20;
    int encoder_out = 32;
    int block_hidden = 256;
    int block_out = 32;
    int classes = 5;

    int rounds = 50;
    int epochs = 1;
    double lr = 0.01;
    int batch_size = 64;
    double tau_start = 1.0;
    double tau_end = 0.1;
    int pretrain_rounds = 0;
    Aggregation aggregation = Aggregation::renormalized;
    bool ledger_include_hypernet = false;
    bool allow_fallback = true;

    int hyp_dx = 32;
    int hyp_dy = 32;
    int hyp_hidden = 64;

    DataSource data_source = DataSource::synth;
    int synth_clusters = 3;
    int synth_clients_per_cluster = 4;
    int synth_samples_per_client = 200;
    double synth_marginal_shift = 2.0;
    double synth_noise = 1.0;
    ShiftKind synth_conditional_shift = ShiftKind::label_permutation;
    double train_fraction = 0.8;
    std::string manifest;
    std::string label_column = "label";

    std::uint64_t seed = 1;
    std::string out_dir = "run";
    bool write_checkpoint = true;

    bool operator==(const ExperimentConfig&) const = default;
};

/// Parses "key = value" lines ('#' starts a comment). Unknown keys and
/// malformed values are collected and reported together via ConfigError.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

/// Applies one "key" / "value" pair onto cfg. Returns an error message
/// instead of throwing so callers can collect.
std::string apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value);

/// Canonical text form; parse_config_text(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

/// Returns every constraint violation, empty when valid.
std::vector<std::string> validate_config(const ExperimentConfig& cfg);

/// Throws ConfigError listing all violations.
void require_valid(const ExperimentConfig& cfg);

/// The list of recognized keys in canonical order.
const std::vector<std::string>& config_keys();

}  // namespace fedmn
