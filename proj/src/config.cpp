// SPDX-License-Identifier: Apache-2.0
#include "fedmn/config.hpp"

#include "fedmn/architecture.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fedmn {

std::string to_string(Method m) {
    switch (m) {
        case Method::fedmn: return "fedmn";
        case Method::fedavg: return "fedavg";
        case Method::local_only: return "local";
    }
    return "?";
}

std::string to_string(Aggregation a) {
    return a == Aggregation::renormalized ? "renormalized" : "literal";
}

std::string to_string(DataSource d) {
    return d == DataSource::synth ? "synth" : "manifest";
}

std::string to_string(ShiftKind s) {
    switch (s) {
        case ShiftKind::label_permutation: return "label_permutation";
        case ShiftKind::boundary_rotation: return "boundary_rotation";
        case ShiftKind::none: return "none";
    }
    return "?";
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool parse_long(const std::string& v, long long& out) {
    if (v.empty()) return false;
    char* end = nullptr;
    out = std::strtoll(v.c_str(), &end, 10);
    return end == v.c_str() + v.size();
}

bool parse_double_str(const std::string& v, double& out) {
    if (v.empty()) return false;
    char* end = nullptr;
    out = std::strtod(v.c_str(), &end);
    return end == v.c_str() + v.size();
}

std::string set_int(int& field, const std::string& key, const std::string& v) {
    long long x = 0;
    if (!parse_long(v, x) || x < -(1LL << 31) || x >= (1LL << 31))
        return key + ": expected integer, got '" + v + "'";
    field = static_cast<int>(x);
    return "";
}

std::string set_double(double& field, const std::string& key, const std::string& v) {
    double x = 0;
    if (!parse_double_str(v, x)) return key + ": expected number, got '" + v + "'";
    field = x;
    return "";
}

std::string set_bool(bool& field, const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") { field = true; return ""; }
    if (v == "false" || v == "0") { field = false; return ""; }
    return key + ": expected true/false, got '" + v + "'";
}

// Shortest decimal that reads back to the same double, so a saved config
// reproduces the run exactly without printing 0.10000000000000001.
std::string fmt_double(double x) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, end);
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "method", "arch", "input_dim", "encoder_out", "block_hidden", "block_out",
        "classes", "rounds", "epochs", "lr", "batch_size", "tau_start", "tau_end",
        "pretrain_rounds", "aggregation", "ledger_include_hypernet", "allow_fallback",
        "hyp.dx", "hyp.dy", "hyp.hidden",
        "data.source", "synth.clusters", "synth.clients_per_cluster",
        "synth.samples_per_client", "synth.marginal_shift", "synth.noise",
        "synth.conditional_shift", "train_fraction", "data.manifest",
        "data.label_column", "seed", "out_dir", "write_checkpoint",
    };
    return keys;
}

std::string apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value) {
    if (key == "method") {
        if (value == "fedmn") cfg.method = Method::fedmn;
        else if (value == "fedavg") cfg.method = Method::fedavg;
        else if (value == "local") cfg.method = Method::local_only;
        else return "method: expected fedmn|fedavg|local, got '" + value + "'";
        return "";
    }
    if (key == "arch") {
        try {
            cfg.arch = parse_layer_widths(value);
        } catch (const ConfigError& e) {
            return std::string("arch: ") + e.what();
        }
        return "";
    }
    if (key == "input_dim") return set_int(cfg.input_dim, key, value);
    if (key == "encoder_out") return set_int(cfg.encoder_out, key, value);
    if (key == "block_hidden") return set_int(cfg.block_hidden, key, value);
    if (key == "block_out") return set_int(cfg.block_out, key, value);
    if (key == "classes") return set_int(cfg.classes, key, value);
    if (key == "rounds") return set_int(cfg.rounds, key, value);
    if (key == "epochs") return set_int(cfg.epochs, key, value);
    if (key == "lr") return set_double(cfg.lr, key, value);
    if (key == "batch_size") return set_int(cfg.batch_size, key, value);
    if (key == "tau_start") return set_double(cfg.tau_start, key, value);
    if (key == "tau_end") return set_double(cfg.tau_end, key, value);
    if (key == "pretrain_rounds") return set_int(cfg.pretrain_rounds, key, value);
    if (key == "aggregation") {
        if (value == "renormalized") cfg.aggregation = Aggregation::renormalized;
        else if (value == "literal") cfg.aggregation = Aggregation::literal;
        else return "aggregation: expected renormalized|literal, got '" + value + "'";
        return "";
    }
    if (key == "ledger_include_hypernet") return set_bool(cfg.ledger_include_hypernet, key, value);
    if (key == "allow_fallback") return set_bool(cfg.allow_fallback, key, value);
    if (key == "hyp.dx") return set_int(cfg.hyp_dx, key, value);
    if (key == "hyp.dy") return set_int(cfg.hyp_dy, key, value);
    if (key == "hyp.hidden") return set_int(cfg.hyp_hidden, key, value);
    if (key == "data.source") {
        if (value == "synth") cfg.data_source = DataSource::synth;
        else if (value == "manifest") cfg.data_source = DataSource::manifest;
        else return "data.source: expected synth|manifest, got '" + value + "'";
        return "";
    }
    if (key == "synth.clusters") return set_int(cfg.synth_clusters, key, value);
    if (key == "synth.clients_per_cluster") return set_int(cfg.synth_clients_per_cluster, key, value);
    if (key == "synth.samples_per_client") return set_int(cfg.synth_samples_per_client, key, value);
    if (key == "synth.marginal_shift") return set_double(cfg.synth_marginal_shift, key, value);
    if (key == "synth.noise") return set_double(cfg.synth_noise, key, value);
    if (key == "synth.conditional_shift") {
        if (value == "label_permutation") cfg.synth_conditional_shift = ShiftKind::label_permutation;
        else if (value == "boundary_rotation") cfg.synth_conditional_shift = ShiftKind::boundary_rotation;
        else if (value == "none") cfg.synth_conditional_shift = ShiftKind::none;
        else return "synth.conditional_shift: expected label_permutation|boundary_rotation|none, got '" + value + "'";
        return "";
    }
    if (key == "train_fraction") return set_double(cfg.train_fraction, key, value);
    if (key == "data.manifest") { cfg.manifest = value; return ""; }
    if (key == "data.label_column") { cfg.label_column = value; return ""; }
    if (key == "seed") {
        long long x = 0;
        if (!parse_long(value, x) || x < 0) return "seed: expected non-negative integer, got '" + value + "'";
        cfg.seed = static_cast<std::uint64_t>(x);
        return "";
    }
    if (key == "out_dir") { cfg.out_dir = value; return ""; }
    if (key == "write_checkpoint") return set_bool(cfg.write_checkpoint, key, value);
    return "unknown key '" + key + "'";
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::vector<std::string> errors;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            errors.push_back("line " + std::to_string(lineno) + ": expected key = value");
            continue;
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        std::string err = apply_config_entry(cfg, key, value);
        if (!err.empty()) errors.push_back("line " + std::to_string(lineno) + ": " + err);
    }
    if (!errors.empty()) {
        std::string msg = "config errors:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << "method = " << to_string(cfg.method) << "\n";
    out << "arch = " << layer_widths_string(cfg.arch) << "\n";
    out << "input_dim = " << cfg.input_dim << "\n";
    out << "encoder_out = " << cfg.encoder_out << "\n";
    out << "block_hidden = " << cfg.block_hidden << "\n";
    out << "block_out = " << cfg.block_out << "\n";
    out << "classes = " << cfg.classes << "\n";
    out << "rounds = " << cfg.rounds << "\n";
    out << "epochs = " << cfg.epochs << "\n";
    out << "lr = " << fmt_double(cfg.lr) << "\n";
    out << "batch_size = " << cfg.batch_size << "\n";
    out << "tau_start = " << fmt_double(cfg.tau_start) << "\n";
    out << "tau_end = " << fmt_double(cfg.tau_end) << "\n";
    out << "pretrain_rounds = " << cfg.pretrain_rounds << "\n";
    out << "aggregation = " << to_string(cfg.aggregation) << "\n";
    out << "ledger_include_hypernet = " << (cfg.ledger_include_hypernet ? "true" : "false") << "\n";
    out << "allow_fallback = " << (cfg.allow_fallback ? "true" : "false") << "\n";
    out << "hyp.dx = " << cfg.hyp_dx << "\n";
    out << "hyp.dy = " << cfg.hyp_dy << "\n";
    out << "hyp.hidden = " << cfg.hyp_hidden << "\n";
    out << "data.source = " << to_string(cfg.data_source) << "\n";
    out << "synth.clusters = " << cfg.synth_clusters << "\n";
    out << "synth.clients_per_cluster = " << cfg.synth_clients_per_cluster << "\n";
    out << "synth.samples_per_client = " << cfg.synth_samples_per_client << "\n";
    out << "synth.marginal_shift = " << fmt_double(cfg.synth_marginal_shift) << "\n";
    out << "synth.noise = " << fmt_double(cfg.synth_noise) << "\n";
    out << "synth.conditional_shift = " << to_string(cfg.synth_conditional_shift) << "\n";
    out << "train_fraction = " << fmt_double(cfg.train_fraction) << "\n";
    out << "data.manifest = " << cfg.manifest << "\n";
    out << "data.label_column = " << cfg.label_column << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "out_dir = " << cfg.out_dir << "\n";
    out << "write_checkpoint = " << (cfg.write_checkpoint ? "true" : "false") << "\n";
    return out.str();
}

std::vector<std::string> validate_config(const ExperimentConfig& cfg) {
    std::vector<std::string> errors;
    auto positive = [&](int v, const char* name) {
        if (v < 1) errors.push_back(std::string(name) + " must be >= 1, got " + std::to_string(v));
    };
    if (cfg.arch.size() < 2) errors.push_back("arch needs at least two layers");
    for (std::size_t i = 0; i < cfg.arch.size(); ++i)
        if (cfg.arch[i] < 1)
            errors.push_back("arch layer " + std::to_string(i + 1) + " must be >= 1, got " +
                             std::to_string(cfg.arch[i]));
    positive(cfg.input_dim, "input_dim");
    positive(cfg.encoder_out, "encoder_out");
    if (cfg.block_hidden < 0)
        errors.push_back("block_hidden must be >= 0, got " + std::to_string(cfg.block_hidden));
    positive(cfg.block_out, "block_out");
    if (cfg.classes < 2) errors.push_back("classes must be >= 2, got " + std::to_string(cfg.classes));
    positive(cfg.rounds, "rounds");
    positive(cfg.epochs, "epochs");
    if (!(cfg.lr >= 0.0)) errors.push_back("lr must be >= 0, got " + fmt_double(cfg.lr));
    positive(cfg.batch_size, "batch_size");
    if (!(cfg.tau_start > 0.0)) errors.push_back("tau_start must be > 0, got " + fmt_double(cfg.tau_start));
    if (!(cfg.tau_end > 0.0)) errors.push_back("tau_end must be > 0, got " + fmt_double(cfg.tau_end));
    if (cfg.tau_end > cfg.tau_start)
        errors.push_back("tau_end must not exceed tau_start");
    if (cfg.pretrain_rounds < 0)
        errors.push_back("pretrain_rounds must be >= 0, got " + std::to_string(cfg.pretrain_rounds));
    positive(cfg.hyp_dx, "hyp.dx");
    positive(cfg.hyp_dy, "hyp.dy");
    positive(cfg.hyp_hidden, "hyp.hidden");
    if (cfg.data_source == DataSource::synth) {
        positive(cfg.synth_clusters, "synth.clusters");
        positive(cfg.synth_clients_per_cluster, "synth.clients_per_cluster");
        positive(cfg.synth_samples_per_client, "synth.samples_per_client");
        if (!(cfg.synth_marginal_shift >= 0.0))
            errors.push_back("synth.marginal_shift must be >= 0");
        if (!(cfg.synth_noise >= 0.0)) errors.push_back("synth.noise must be >= 0");
        if (cfg.classes > cfg.synth_samples_per_client)
            errors.push_back("classes exceeds synth.samples_per_client");
    } else if (cfg.manifest.empty()) {
        errors.push_back("data.manifest required when data.source = manifest");
    }
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0))
        errors.push_back("train_fraction must be in (0, 1), got " + fmt_double(cfg.train_fraction));
    if (cfg.out_dir.empty()) errors.push_back("out_dir must not be empty");
    return errors;
}

void require_valid(const ExperimentConfig& cfg) {
    std::vector<std::string> errors = validate_config(cfg);
    if (errors.empty()) return;
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
}

}  // namespace fedmn
