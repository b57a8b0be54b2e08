// SPDX-License-Identifier: Apache-2.0
#include "fedmn/cli.hpp"

#include "fedmn/checkpoint.hpp"
#include "fedmn/config.hpp"
#include "fedmn/datagen.hpp"
#include "fedmn/federation.hpp"
#include "fedmn/metrics.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fedmn {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// --config plus one override flag per config key; flags beat the file,
/// the file beats the defaults.
struct ConfigCli {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "config file (key = value lines)");
        for (const std::string& key : config_keys()) {
            cmd->add_option_function<std::string>(
                    "--" + key,
                    [this, key](const std::string& v) { overrides.emplace_back(key, v); },
                    "override config key " + key)
                ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        }
    }

    ExperimentConfig resolve() const {
        ExperimentConfig cfg;
        if (!config_path.empty()) cfg = load_config_file(config_path);
        std::vector<std::string> errors;
        for (const auto& [key, value] : overrides) {
            std::string err = apply_config_entry(cfg, key, value);
            if (!err.empty()) errors.push_back(err);
        }
        for (std::string& e : validate_config(cfg)) errors.push_back(std::move(e));
        if (!errors.empty()) {
            std::string msg = "invalid config:";
            for (const std::string& e : errors) msg += "\n  " + e;
            throw ConfigError(msg);
        }
        return cfg;
    }
};

std::string metrics_path(const std::string& run_dir) {
    return (fs::path(run_dir) / "metrics.jsonl").string();
}

int run_command(const ConfigCli& cc) {
    ExperimentConfig cfg = cc.resolve();
    FederatedDataset ds = build_dataset(cfg);
    fs::create_directories(cfg.out_dir);

    MetricsWriter writer(metrics_path(cfg.out_dir));
    writer.write_header(cfg, ds);
    TrainResult res = run_training(cfg, ds, [&](const RoundMetrics& rm) {
        writer.write_round(rm);
        std::printf("round %4d [%s] tau %.3f loss %.4f acc %.4f sent %lld\n", rm.round,
                    rm.phase.c_str(), rm.tau, rm.global_loss, rm.acc_mean,
                    static_cast<long long>(rm.up_total + rm.down_total));
    });
    writer.write_summary(res);

    std::ofstream cfg_out(fs::path(cfg.out_dir) / "config.txt");
    if (!cfg_out) throw IoError("cannot write resolved config in " + cfg.out_dir);
    cfg_out << serialize_config(cfg);

    if (cfg.write_checkpoint) save_pool((fs::path(cfg.out_dir) / "global.pool").string(), res.global);

    const RoundMetrics& last = res.rounds.back();
    std::printf("done: method %s rounds %zu final acc %.4f (median %.4f) loss %.4f transmitted %lld\n",
                to_string(cfg.method).c_str(), res.rounds.size(), last.acc_mean, last.acc_median,
                last.global_loss, static_cast<long long>(res.cumulative));
    return 0;
}

int validate_command(const ConfigCli& cc) {
    ExperimentConfig cfg = cc.resolve();  // throws with the full error list
    std::cout << "config ok\n" << serialize_config(cfg);
    return 0;
}

struct RunRow {
    std::string dir;
    std::string method;
    std::int64_t rounds = 0;
    double acc = 0.0;
    double loss = 0.0;
    std::int64_t transmitted = 0;
};

RunRow summarize_run(const std::string& dir) {
    MetricsFile mf = read_metrics(metrics_path(dir));
    RunRow row;
    row.dir = dir;
    row.method = mf.header.value("method", "?");
    row.rounds = static_cast<std::int64_t>(mf.rounds.size());

    // Recompute the ledger from the per-round records; a summary that
    // disagrees means the file was edited or the run misbehaved.
    std::int64_t total = 0;
    for (const json& r : mf.rounds)
        total += r.value("up_total", std::int64_t{0}) + r.value("down_total", std::int64_t{0});
    row.transmitted = total;
    const std::int64_t claimed = mf.summary.value("cumulative", std::int64_t{-1});
    if (claimed != total)
        throw IoError("metrics in " + dir + ": summary claims " + std::to_string(claimed) +
                      " transmitted parameters, rounds add up to " + std::to_string(total));
    if (!mf.rounds.empty()) {
        row.acc = mf.rounds.back().value("acc_mean", 0.0);
        row.loss = mf.rounds.back().value("global_loss", 0.0);
    }
    return row;
}

int compare_command(const std::vector<std::string>& dirs, const std::string& csv_path) {
    std::vector<RunRow> rows;
    rows.reserve(dirs.size());
    for (const std::string& d : dirs) rows.push_back(summarize_run(d));
    std::stable_sort(rows.begin(), rows.end(),
                     [](const RunRow& a, const RunRow& b) { return a.transmitted < b.transmitted; });

    std::size_t width = 3;
    for (const RunRow& r : rows) width = std::max(width, r.dir.size());
    std::printf("%-*s  %-7s %7s %10s %12s %14s\n", static_cast<int>(width), "run", "method",
                "rounds", "final_acc", "final_loss", "transmitted");
    for (const RunRow& r : rows)
        std::printf("%-*s  %-7s %7lld %10.4f %12.4f %14lld\n", static_cast<int>(width),
                    r.dir.c_str(), r.method.c_str(), static_cast<long long>(r.rounds), r.acc,
                    r.loss, static_cast<long long>(r.transmitted));

    if (!csv_path.empty()) {
        std::ofstream csv(csv_path);
        if (!csv) throw IoError("cannot write csv: " + csv_path);
        csv << "run,method,rounds,final_acc_mean,final_global_loss,transmitted\n";
        char buf[64];
        for (const RunRow& r : rows) {
            csv << r.dir << ',' << r.method << ',' << r.rounds << ',';
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,", r.acc, r.loss);
            csv << buf << r.transmitted << '\n';
        }
    }
    return 0;
}

int hamming(const std::string& a, const std::string& b) {
    int d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
    return d;
}

int decisions_command(const std::string& dir) {
    MetricsFile mf = read_metrics(metrics_path(dir));
    const std::string method = mf.header.value("method", "?");
    if (method != "fedmn")
        throw DataError("decisions-report needs a fedmn run, " + dir + " used " + method);
    if (mf.rounds.empty()) throw DataError("run " + dir + " recorded no rounds");

    std::vector<std::string> bits;
    for (const json& r : mf.rounds) {
        auto it = r.find("decisions");
        if (it != r.end() && !it->empty()) bits = it->get<std::vector<std::string>>();
    }
    if (bits.empty()) throw DataError("run " + dir + " recorded no decisions");
    std::vector<int> ids = mf.header.value("clients", std::vector<int>{});
    std::vector<int> clusters = mf.header.value("clusters", std::vector<int>{});
    const std::size_t m = bits.size();

    std::printf("final decisions for %s (%zu clients, %zu gates)\n", dir.c_str(), m,
                bits[0].size());
    for (std::size_t i = 0; i < m; ++i) {
        int id = i < ids.size() ? ids[i] : static_cast<int>(i);
        int cl = i < clusters.size() ? clusters[i] : -1;
        std::printf("client %3d cluster %2d  %s\n", id, cl, bits[i].c_str());
    }

    std::printf("\npairwise hamming distances\n      ");
    for (std::size_t j = 0; j < m; ++j) std::printf("%5zu", j);
    std::printf("\n");
    double within = 0.0, between = 0.0;
    int nw = 0, nb = 0;
    for (std::size_t i = 0; i < m; ++i) {
        std::printf("%5zu ", i);
        for (std::size_t j = 0; j < m; ++j) {
            int d = hamming(bits[i], bits[j]);
            std::printf("%5d", d);
            if (j > i && i < clusters.size() && j < clusters.size() && clusters[i] >= 0 &&
                clusters[j] >= 0) {
                if (clusters[i] == clusters[j]) { within += d; ++nw; }
                else { between += d; ++nb; }
            }
        }
        std::printf("\n");
    }
    if (nw > 0 && nb > 0)
        std::printf("\nmean hamming: within-cluster %.3f, between-cluster %.3f\n", within / nw,
                    between / nb);
    return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"federated modular-network simulator"};
    app.require_subcommand(1);

    ConfigCli run_cfg;
    CLI::App* run = app.add_subcommand("run", "train one configuration and record metrics");
    run_cfg.attach(run);

    ConfigCli validate_cfg;
    CLI::App* validate =
        app.add_subcommand("validate-config", "check a configuration and report every problem");
    validate_cfg.attach(validate);

    std::vector<std::string> compare_dirs;
    std::string compare_csv;
    CLI::App* compare = app.add_subcommand("compare", "tabulate finished runs by communication cost");
    compare->add_option("dirs", compare_dirs, "run directories")->required()->expected(-1);
    compare->add_option("--csv", compare_csv, "also write the table as csv");

    std::string decisions_dir;
    CLI::App* decisions =
        app.add_subcommand("decisions-report", "print per-client routing decisions of a run");
    decisions->add_option("dir", decisions_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
        if (run->parsed()) return run_command(run_cfg);
        if (validate->parsed()) return validate_command(validate_cfg);
        if (compare->parsed()) return compare_command(compare_dirs, compare_csv);
        if (decisions->parsed()) return decisions_command(decisions_dir);
        return 2;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace fedmn
