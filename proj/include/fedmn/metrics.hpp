// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedmn/config.hpp"
#include "fedmn/datagen.hpp"
#include "fedmn/federation.hpp"

#include "json.hpp"

#include <fstream>

namespace fedmn {

/// Streams a run to JSON Lines: one versioned header record, one record per
/// round, one summary record last. A file without the summary record was
/// truncated mid-run.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path);

    void write_header(const ExperimentConfig& cfg, const FederatedDataset& data);
    void write_round(const RoundMetrics& rm);
    void write_summary(const TrainResult& res);

private:
    void write_line(const nlohmann::json& j);
    std::ofstream out_;
    std::string path_;
};

struct MetricsFile {
    nlohmann::json header;
    std::vector<nlohmann::json> rounds;
    nlohmann::json summary;
};

/// Parses a metrics file, enforcing the header-rounds-summary shape.
/// Throws IoError on unreadable files, malformed lines (with line numbers),
/// a missing or wrong-version header, or a missing summary (truncation).
MetricsFile read_metrics(const std::string& path);

constexpr int kMetricsSchema = 1;

}  // namespace fedmn
