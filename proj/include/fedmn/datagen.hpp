// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedmn/common.hpp"
#include "fedmn/config.hpp"

#include <utility>

namespace fedmn {

struct SynthConfig {
    int num_clusters = 3;
    int clients_per_cluster = 4;
    int samples_per_client = 200;
    int input_dim = 20;
    int num_classes = 5;
    double marginal_shift = 2.0;
    double noise = 1.0;
    ShiftKind conditional_shift = ShiftKind::label_permutation;
    double train_fraction = 0.8;
    std::uint64_t seed = 1;
};

struct ClientData {
    Matrix train_x;
    Matrix test_x;
    std::vector<int> train_y;
    std::vector<int> test_y;
    int cluster = -1;  // -1 when the grouping is unknown (csv/pathological)
};

struct FederatedDataset {
    std::vector<ClientData> clients;
    int input_dim = 0;
    int num_classes = 0;

    Eigen::Index total_train_samples() const;
};

/// Clustered heterogeneous mixture: cluster k draws features around its own
/// mean (radius = marginal_shift) and relabels the shared linear rule with a
/// per-cluster conditional shift. Deterministic in the seed.
FederatedDataset generate_synthetic(const SynthConfig& cfg);

/// Label-sorted shard dealing: rows are ordered by label, cut into
/// num_clients * shards_per_client equal shards, and each client receives
/// shards_per_client of them at random. Low shard counts give skewed
/// single-label clients, shards_per_client near num_classes evens back out.
FederatedDataset partition_labels_pathological(const Matrix& x, const std::vector<int>& y,
                                               int num_clients, int shards_per_client,
                                               double train_fraction, std::uint64_t seed);

/// Reads a headered numeric CSV. Features are min-max scaled to [0, 1]
/// per column (constant columns map to 0); the label column must hold
/// non-negative integers. Errors carry line and column context.
std::pair<Matrix, std::vector<int>> load_csv(const std::string& path,
                                             const std::string& label_column);

/// Manifest: one "train.csv,test.csv" pair per line, one client per line.
FederatedDataset load_manifest(const std::string& path, const std::string& label_column);

/// Builds the dataset named by an experiment config (synth or manifest).
FederatedDataset build_dataset(const ExperimentConfig& cfg);

}  // namespace fedmn
