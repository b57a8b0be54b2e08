// SPDX-License-Identifier: Apache-2.0
#include "fedmn/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace fedmn {

namespace {

constexpr double kQuarterPi = 0.78539816339744830961;

constexpr std::uint64_t kTagBaseRule = 0xBA5E;
constexpr std::uint64_t kTagCluster = 0xC1A5;
constexpr std::uint64_t kTagClient = 0xDA7A;
constexpr std::uint64_t kTagShards = 0x5A4D;

int argmax_row(const Vector& row) {
    int best = 0;
    for (int j = 1; j < row.size(); ++j)
        if (row(j) > row(best)) best = j;
    return best;
}

int clamp_train_rows(double fraction, int n) {
    int k = static_cast<int>(std::floor(fraction * n));
    return std::max(1, std::min(n - 1, k));
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace

Eigen::Index FederatedDataset::total_train_samples() const {
    Eigen::Index n = 0;
    for (const auto& c : clients) n += c.train_x.rows();
    return n;
}

FederatedDataset generate_synthetic(const SynthConfig& cfg) {
    if (cfg.num_clusters < 1 || cfg.clients_per_cluster < 1)
        throw ConfigError("synthetic data needs at least one cluster and one client per cluster");
    if (cfg.input_dim < 1) throw ConfigError("synthetic input_dim must be >= 1");
    if (cfg.num_classes < 2) throw ConfigError("synthetic num_classes must be >= 2");
    if (cfg.samples_per_client < 2)
        throw ConfigError("samples_per_client must be >= 2 so both splits are non-empty");
    if (!(cfg.noise >= 0.0) || !(cfg.marginal_shift >= 0.0))
        throw ConfigError("noise and marginal_shift must be >= 0");
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0))
        throw ConfigError("train_fraction must be in (0, 1)");
    if (cfg.num_classes > cfg.samples_per_client)
        throw DataError("num_classes " + std::to_string(cfg.num_classes) +
                        " exceeds samples_per_client " + std::to_string(cfg.samples_per_client));

    const int d = cfg.input_dim, c = cfg.num_classes;

    Rng base_rng(derive_seed(cfg.seed, kTagBaseRule));
    Matrix base_rule(d, c);
    for (Eigen::Index i = 0; i < base_rule.size(); ++i) base_rule(i) = base_rng.normal();

    // Per-cluster pieces: a mean direction plus the conditional shift.
    std::vector<Vector> means(cfg.num_clusters);
    std::vector<Matrix> rules(cfg.num_clusters, base_rule);
    for (int k = 0; k < cfg.num_clusters; ++k) {
        Rng crng(derive_seed(cfg.seed, kTagCluster, static_cast<std::uint64_t>(k)));
        Vector dir(d);
        for (int i = 0; i < d; ++i) dir(i) = crng.normal();
        double norm = dir.norm();
        if (norm < 1e-12) { dir.setZero(); dir(0) = 1.0; norm = 1.0; }
        means[k] = cfg.marginal_shift * (dir / norm);
        if (cfg.conditional_shift == ShiftKind::boundary_rotation && d >= 2) {
            const double theta = k * kQuarterPi;  // 45 degrees per cluster
            Vector r0 = base_rule.row(0), r1 = base_rule.row(1);
            rules[k].row(0) = std::cos(theta) * r0 - std::sin(theta) * r1;
            rules[k].row(1) = std::sin(theta) * r0 + std::cos(theta) * r1;
        }
    }

    FederatedDataset ds;
    ds.input_dim = d;
    ds.num_classes = c;
    const int n = cfg.samples_per_client;
    const int n_train = clamp_train_rows(cfg.train_fraction, n);
    for (int i = 0; i < cfg.num_clusters * cfg.clients_per_cluster; ++i) {
        const int k = i / cfg.clients_per_cluster;
        Rng rng(derive_seed(cfg.seed, kTagClient, static_cast<std::uint64_t>(i)));
        Matrix x(n, d);
        for (int s = 0; s < n; ++s)
            for (int j = 0; j < d; ++j)
                x(s, j) = means[k](j) + cfg.noise * rng.normal();
        Matrix scores = x * rules[k];
        std::vector<int> y(n);
        for (int s = 0; s < n; ++s) {
            int base = argmax_row(scores.row(s));
            y[s] = cfg.conditional_shift == ShiftKind::label_permutation ? (base + k) % c : base;
        }
        ClientData cd;
        cd.cluster = k;
        cd.train_x = x.topRows(n_train);
        cd.test_x = x.bottomRows(n - n_train);
        cd.train_y.assign(y.begin(), y.begin() + n_train);
        cd.test_y.assign(y.begin() + n_train, y.end());
        ds.clients.push_back(std::move(cd));
    }
    return ds;
}

FederatedDataset partition_labels_pathological(const Matrix& x, const std::vector<int>& y,
                                               int num_clients, int shards_per_client,
                                               double train_fraction, std::uint64_t seed) {
    if (x.rows() != static_cast<Eigen::Index>(y.size()))
        throw ShapeError("feature rows " + std::to_string(x.rows()) + " != label count " +
                         std::to_string(y.size()));
    if (num_clients < 1 || shards_per_client < 1)
        throw ConfigError("num_clients and shards_per_client must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("train_fraction must be in (0, 1)");
    const int total = static_cast<int>(x.rows());
    const int num_shards = num_clients * shards_per_client;
    if (total < num_shards * 2)
        throw DataError("too few rows (" + std::to_string(total) + ") for " +
                        std::to_string(num_shards) + " shards");

    std::vector<int> order(total);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return y[a] < y[b]; });

    const int shard_size = total / num_shards;  // the last shard absorbs the remainder
    Rng deal_rng(derive_seed(seed, kTagShards));
    std::vector<int> shard_ids = deal_rng.permutation(num_shards);

    FederatedDataset ds;
    ds.input_dim = static_cast<int>(x.cols());
    int max_label = 0;
    for (int v : y) {
        if (v < 0) throw DataError("labels must be non-negative");
        max_label = std::max(max_label, v);
    }
    ds.num_classes = max_label + 1;

    for (int cidx = 0; cidx < num_clients; ++cidx) {
        std::vector<int> rows;
        for (int s = 0; s < shards_per_client; ++s) {
            int shard = shard_ids[cidx * shards_per_client + s];
            int begin = shard * shard_size;
            int end = shard == num_shards - 1 ? total : begin + shard_size;
            for (int r = begin; r < end; ++r) rows.push_back(order[r]);
        }
        Rng row_rng(derive_seed(seed, kTagShards, static_cast<std::uint64_t>(cidx) + 1));
        row_rng.shuffle(rows);
        const int n = static_cast<int>(rows.size());
        const int n_train = clamp_train_rows(train_fraction, n);
        ClientData cd;
        cd.train_x.resize(n_train, x.cols());
        cd.test_x.resize(n - n_train, x.cols());
        for (int r = 0; r < n; ++r) {
            if (r < n_train) {
                cd.train_x.row(r) = x.row(rows[r]);
                cd.train_y.push_back(y[rows[r]]);
            } else {
                cd.test_x.row(r - n_train) = x.row(rows[r]);
                cd.test_y.push_back(y[rows[r]]);
            }
        }
        ds.clients.push_back(std::move(cd));
    }
    return ds;
}

std::pair<Matrix, std::vector<int>> load_csv(const std::string& path,
                                             const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open csv file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError("csv " + path + ": empty file");
    std::vector<std::string> header = split_fields(strip_cr(line));
    int label_idx = -1;
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_column) { label_idx = static_cast<int>(i); break; }
    if (label_idx < 0)
        throw DataError("csv " + path + ": label column '" + label_column + "' not found");
    const int ncols = static_cast<int>(header.size());

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (line.empty()) continue;
        std::vector<std::string> fields = split_fields(line);
        if (static_cast<int>(fields.size()) != ncols)
            throw DataError("csv " + path + " line " + std::to_string(lineno) + ": expected " +
                            std::to_string(ncols) + " fields, got " +
                            std::to_string(fields.size()));
        std::vector<double> feat;
        feat.reserve(ncols - 1);
        for (int i = 0; i < ncols; ++i) {
            const std::string& cell = fields[i];
            char* end = nullptr;
            double v = std::strtod(cell.c_str(), &end);
            if (cell.empty() || end != cell.c_str() + cell.size())
                throw DataError("csv " + path + " line " + std::to_string(lineno) + ", column '" +
                                header[i] + "': invalid number '" + cell + "'");
            if (i == label_idx) {
                if (v < 0.0 || v != std::floor(v))
                    throw DataError("csv " + path + " line " + std::to_string(lineno) +
                                    ": label must be a non-negative integer, got '" + cell + "'");
                labels.push_back(static_cast<int>(v));
            } else {
                feat.push_back(v);
            }
        }
        rows.push_back(std::move(feat));
    }
    if (rows.empty()) throw DataError("csv " + path + ": no data rows");

    const int n = static_cast<int>(rows.size());
    const int d = ncols - 1;
    Matrix x(n, d);
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < d; ++j) x(r, j) = rows[r][j];
    for (int j = 0; j < d; ++j) {
        double lo = x.col(j).minCoeff(), hi = x.col(j).maxCoeff();
        double span = hi - lo;
        if (span > 0.0)
            x.col(j) = (x.col(j).array() - lo) / span;
        else
            x.col(j).setZero();
    }
    return {std::move(x), std::move(labels)};
}

FederatedDataset load_manifest(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();

    FederatedDataset ds;
    std::string line;
    int lineno = 0;
    int max_label = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> parts = split_fields(line);
        if (parts.size() != 2)
            throw IoError("manifest " + path + " line " + std::to_string(lineno) +
                          ": expected 'train.csv,test.csv'");
        auto resolve = [&](const std::string& p) {
            std::filesystem::path fp(p);
            return fp.is_absolute() ? fp.string() : (base / fp).string();
        };
        auto [train_x, train_y] = load_csv(resolve(parts[0]), label_column);
        auto [test_x, test_y] = load_csv(resolve(parts[1]), label_column);
        if (train_x.cols() != test_x.cols())
            throw DataError("manifest " + path + " line " + std::to_string(lineno) +
                            ": train has " + std::to_string(train_x.cols()) +
                            " features, test has " + std::to_string(test_x.cols()));
        if (ds.clients.empty()) {
            ds.input_dim = static_cast<int>(train_x.cols());
        } else if (train_x.cols() != ds.input_dim) {
            throw DataError("manifest " + path + " line " + std::to_string(lineno) +
                            ": feature count differs from earlier clients");
        }
        for (int v : train_y) max_label = std::max(max_label, v);
        for (int v : test_y) max_label = std::max(max_label, v);
        ClientData cd;
        cd.train_x = std::move(train_x);
        cd.test_x = std::move(test_x);
        cd.train_y = std::move(train_y);
        cd.test_y = std::move(test_y);
        ds.clients.push_back(std::move(cd));
    }
    if (ds.clients.empty()) throw DataError("manifest " + path + ": no clients");
    ds.num_classes = max_label + 1;
    return ds;
}

FederatedDataset build_dataset(const ExperimentConfig& cfg) {
    if (cfg.data_source == DataSource::synth) {
        SynthConfig sc;
        sc.num_clusters = cfg.synth_clusters;
        sc.clients_per_cluster = cfg.synth_clients_per_cluster;
        sc.samples_per_client = cfg.synth_samples_per_client;
        sc.input_dim = cfg.input_dim;
        sc.num_classes = cfg.classes;
        sc.marginal_shift = cfg.synth_marginal_shift;
        sc.noise = cfg.synth_noise;
        sc.conditional_shift = cfg.synth_conditional_shift;
        sc.train_fraction = cfg.train_fraction;
        sc.seed = cfg.seed;
        return generate_synthetic(sc);
    }
    FederatedDataset ds = load_manifest(cfg.manifest, cfg.label_column);
    if (ds.input_dim != cfg.input_dim)
        throw DataError("manifest features (" + std::to_string(ds.input_dim) +
                        ") do not match input_dim (" + std::to_string(cfg.input_dim) + ")");
    if (ds.num_classes > cfg.classes)
        throw DataError("manifest labels need " + std::to_string(ds.num_classes) +
                        " classes, config allows " + std::to_string(cfg.classes));
    ds.num_classes = cfg.classes;
    return ds;
}

}  // namespace fedmn
