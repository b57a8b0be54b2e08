// SPDX-License-Identifier: Apache-2.0
#include "fedmn/metrics.hpp"

namespace fedmn {

using nlohmann::json;

MetricsWriter::MetricsWriter(const std::string& path) : out_(path), path_(path) {
    if (!out_) throw IoError("cannot open metrics file for writing: " + path);
}

void MetricsWriter::write_line(const json& j) {
    out_ << j.dump() << '\n';
    if (!out_) throw IoError("failed writing metrics file: " + path_);
}

void MetricsWriter::write_header(const ExperimentConfig& cfg, const FederatedDataset& data) {
    json j;
    j["record"] = "header";
    j["schema"] = kMetricsSchema;
    j["method"] = to_string(cfg.method);
    j["config"] = serialize_config(cfg);
    std::vector<int> ids, clusters;
    for (std::size_t i = 0; i < data.clients.size(); ++i) {
        if (data.clients[i].train_x.rows() == 0) continue;  // skipped by the run
        ids.push_back(static_cast<int>(i));
        clusters.push_back(data.clients[i].cluster);
    }
    j["clients"] = ids;
    j["clusters"] = clusters;
    ArchitectureSpec spec;
    spec.layer_widths = cfg.arch;
    j["paths"] = path_count(spec);
    j["blocks"] = block_count(spec);
    write_line(j);
}

void MetricsWriter::write_round(const RoundMetrics& rm) {
    json j;
    j["record"] = "round";
    j["round"] = rm.round;
    j["phase"] = rm.phase;
    j["tau"] = rm.tau;
    j["global_loss"] = rm.global_loss;
    j["acc_mean"] = rm.acc_mean;
    j["acc_median"] = rm.acc_median;
    j["acc"] = rm.client_acc;
    j["up"] = rm.up;
    j["down"] = rm.down;
    j["up_total"] = rm.up_total;
    j["down_total"] = rm.down_total;
    j["cumulative"] = rm.cumulative;
    j["decisions"] = rm.decisions;
    write_line(j);
}

void MetricsWriter::write_summary(const TrainResult& res) {
    json j;
    j["record"] = "summary";
    j["rounds"] = res.rounds.size();
    if (!res.rounds.empty()) {
        const RoundMetrics& last = res.rounds.back();
        j["final_acc_mean"] = last.acc_mean;
        j["final_acc_median"] = last.acc_median;
        j["final_global_loss"] = last.global_loss;
    }
    j["cumulative"] = res.cumulative;
    write_line(j);
    out_.flush();
}

MetricsFile read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics file: " + path);
    MetricsFile mf;
    std::string line;
    int lineno = 0;
    bool have_header = false, have_summary = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw IoError("metrics file " + path + " line " + std::to_string(lineno) +
                          ": invalid json (" + e.what() + ")");
        }
        const std::string record = j.value("record", "");
        if (!have_header) {
            if (record != "header")
                throw IoError("metrics file " + path + ": first record must be the header");
            if (j.value("schema", -1) != kMetricsSchema)
                throw IoError("metrics file " + path + ": unsupported schema version");
            mf.header = std::move(j);
            have_header = true;
        } else if (record == "round") {
            if (have_summary)
                throw IoError("metrics file " + path + " line " + std::to_string(lineno) +
                              ": round record after the summary");
            mf.rounds.push_back(std::move(j));
        } else if (record == "summary") {
            mf.summary = std::move(j);
            have_summary = true;
        } else {
            throw IoError("metrics file " + path + " line " + std::to_string(lineno) +
                          ": unknown record type '" + record + "'");
        }
    }
    if (!have_header) throw IoError("metrics file " + path + ": missing header record");
    if (!have_summary)
        throw IoError("metrics file " + path + ": no summary record; the run was truncated");
    return mf;
}

}  // namespace fedmn
