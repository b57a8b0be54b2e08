// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fedmn/checkpoint.hpp"
#include "fedmn/cli.hpp"
#include "fedmn/config.hpp"
#include "fedmn/metrics.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace fedmn;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "fedmn");
    std::vector<char*> argv;
    argv.reserve(args.size());
    for (std::string& a : args) argv.push_back(a.data());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

fs::path work_dir() {
    fs::path dir = fs::temp_directory_path() / "fedmn_test_cli";
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(static_cast<bool>(in));
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> tiny_run_flags() {
    return {
        "--arch", "1x2x2", "--input_dim", "5", "--encoder_out", "4", "--block_hidden", "0",
        "--block_out", "4", "--classes", "3", "--rounds", "2", "--lr", "0.05",
        "--batch_size", "16", "--synth.clusters", "2", "--synth.clients_per_cluster", "1",
        "--synth.samples_per_client", "40", "--hyp.dx", "3", "--hyp.dy", "3",
        "--hyp.hidden", "4", "--seed", "5",
    };
}

int tiny_run(const std::string& out_dir, std::vector<std::string> extra = {}) {
    std::vector<std::string> args = {"run"};
    std::vector<std::string> flags = tiny_run_flags();
    args.insert(args.end(), flags.begin(), flags.end());
    args.push_back("--out_dir");
    args.push_back(out_dir);
    args.insert(args.end(), extra.begin(), extra.end());
    return run_cli(args);
}

}  // namespace

TEST_CASE("config serialization round-trips every field") {
    ExperimentConfig cfg;
    CHECK(parse_config_text(serialize_config(cfg)) == cfg);

    cfg.method = Method::fedavg;
    cfg.arch = {2, 3, 3, 2};
    cfg.input_dim = 7;
    cfg.encoder_out = 9;
    cfg.block_hidden = 11;
    cfg.block_out = 13;
    cfg.classes = 4;
    cfg.rounds = 17;
    cfg.epochs = 2;
    cfg.lr = 0.037;
    cfg.batch_size = 19;
    cfg.tau_start = 0.9;
    cfg.tau_end = 0.2;
    cfg.pretrain_rounds = 3;
    cfg.aggregation = Aggregation::literal;
    cfg.ledger_include_hypernet = true;
    cfg.allow_fallback = false;
    cfg.hyp_dx = 5;
    cfg.hyp_dy = 6;
    cfg.hyp_hidden = 7;
    cfg.data_source = DataSource::manifest;
    cfg.synth_clusters = 2;
    cfg.synth_clients_per_cluster = 5;
    cfg.synth_samples_per_client = 123;
    cfg.synth_marginal_shift = 0.25;
    cfg.synth_noise = 1.75;
    cfg.synth_conditional_shift = ShiftKind::boundary_rotation;
    cfg.train_fraction = 0.75;
    cfg.manifest = "data/clients.txt";
    cfg.label_column = "y";
    cfg.seed = 987654321;
    cfg.out_dir = "runs/x";
    cfg.write_checkpoint = false;
    CHECK(parse_config_text(serialize_config(cfg)) == cfg);
}

TEST_CASE("config parsing reports every problem at once") {
    const std::string text =
        "method = fedmn\n"
        "rounds = banana\n"
        "# comment line\n"
        "mystery_key = 3\n"
        "lr 0.1\n"
        "tau_start = 0.5\n";
    try {
        parse_config_text(text);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        CHECK(msg.find("line 2") != std::string::npos);
        CHECK(msg.find("rounds") != std::string::npos);
        CHECK(msg.find("line 4") != std::string::npos);
        CHECK(msg.find("mystery_key") != std::string::npos);
        CHECK(msg.find("line 5") != std::string::npos);
    }
}

TEST_CASE("config validation collects all violations") {
    ExperimentConfig cfg;
    cfg.rounds = 0;
    cfg.classes = 1;
    cfg.tau_end = 2.0;  // above tau_start
    cfg.train_fraction = 1.5;
    std::vector<std::string> errors = validate_config(cfg);
    CHECK(errors.size() == 4);

    cfg = ExperimentConfig{};
    CHECK(validate_config(cfg).empty());

    cfg.data_source = DataSource::manifest;
    errors = validate_config(cfg);
    REQUIRE(errors.size() == 1);
    CHECK(errors[0].find("manifest") != std::string::npos);
}

TEST_CASE("cli precedence: flags beat the config file") {
    fs::path dir = work_dir();
    fs::path cfg_file = dir / "base.cfg";
    {
        std::ofstream out(cfg_file);
        out << "rounds = 9\nlr = 0.5\nseed = 42\n";
    }
    fs::path out_dir = dir / "prec";
    int rc = run_cli({"run", "--config", cfg_file.string(), "--rounds", "2", "--lr", "0.05",
                      "--arch", "1x2x2", "--input_dim", "5", "--encoder_out", "4",
                      "--block_hidden", "0", "--block_out", "4", "--classes", "3",
                      "--batch_size", "16", "--synth.clusters", "2",
                      "--synth.clients_per_cluster", "1", "--synth.samples_per_client", "40",
                      "--hyp.dx", "3", "--hyp.dy", "3", "--hyp.hidden", "4",
                      "--out_dir", out_dir.string()});
    CHECK(rc == 0);
    std::string resolved = slurp(out_dir / "config.txt");
    CHECK(resolved.find("rounds = 2\n") != std::string::npos);   // flag wins
    CHECK(resolved.find("seed = 42\n") != std::string::npos);    // file wins over default
    ExperimentConfig cfg = parse_config_text(resolved);
    CHECK(cfg.lr == 0.05);
}

TEST_CASE("cli exit codes distinguish config, io, and data errors") {
    fs::path dir = work_dir();
    CHECK(run_cli({"validate-config", "--rounds", "0"}) == 2);
    CHECK(run_cli({"validate-config", "--rounds", "5"}) == 0);
    CHECK(run_cli({"validate-config", "--nonsense-flag", "1"}) == 2);
    CHECK(run_cli({"run", "--config", (dir / "missing.cfg").string()}) == 3);
    CHECK(run_cli({"run", "--data.source", "manifest", "--data.manifest",
                   (dir / "missing_manifest.txt").string()}) == 3);
    CHECK(run_cli({"compare", (dir / "no_such_run").string()}) == 3);
    CHECK(run_cli({"decisions-report", (dir / "no_such_run").string()}) == 3);
}

TEST_CASE("run produces a well-formed, reproducible metrics file") {
    fs::path dir = work_dir();
    fs::path a = dir / "repro";
    REQUIRE(tiny_run(a.string()) == 0);
    std::string first_metrics = slurp(a / "metrics.jsonl");
    std::string first_pool = slurp(a / "global.pool");

    // re-running the identical config overwrites with identical bytes
    REQUIRE(tiny_run(a.string()) == 0);
    CHECK(slurp(a / "metrics.jsonl") == first_metrics);
    CHECK(slurp(a / "global.pool") == first_pool);

    MetricsFile mf = read_metrics((a / "metrics.jsonl").string());
    CHECK(mf.header["method"] == "fedmn");
    CHECK(mf.header["schema"] == kMetricsSchema);
    REQUIRE(mf.rounds.size() == 2);
    std::int64_t total = 0;
    for (const auto& r : mf.rounds) {
        total += r["up_total"].get<std::int64_t>() + r["down_total"].get<std::int64_t>();
        CHECK(r["phase"] == "train");
        CHECK(r["acc"].size() == 2);
        CHECK(r["decisions"].size() == 2);
    }
    CHECK(mf.summary["cumulative"].get<std::int64_t>() == total);

    // different seed, different bytes (also exercises repeated-flag last-wins)
    fs::path c = dir / "repro_c";
    REQUIRE(tiny_run(c.string(), {"--seed", "6"}) == 0);
    CHECK(slurp(c / "config.txt").find("seed = 6\n") != std::string::npos);
    CHECK(first_metrics != slurp(c / "metrics.jsonl"));
}

TEST_CASE("metrics reader flags truncated and malformed files") {
    fs::path dir = work_dir();
    fs::path run_dir = dir / "trunc";
    REQUIRE(tiny_run(run_dir.string()) == 0);
    std::string full = slurp(run_dir / "metrics.jsonl");

    SUBCASE("missing summary means truncation") {
        std::string cut = full.substr(0, full.rfind("{\"cumulative\""));
        std::ofstream(run_dir / "cut.jsonl") << cut;
        CHECK_THROWS_WITH_AS(read_metrics((run_dir / "cut.jsonl").string()),
                             doctest::Contains("truncated"), IoError);
    }

    SUBCASE("bad json names the line") {
        std::ofstream(run_dir / "bad.jsonl") << full << "{oops\n";
        CHECK_THROWS_AS(read_metrics((run_dir / "bad.jsonl").string()), IoError);
    }

    SUBCASE("first record must be a header") {
        std::string tail = full.substr(full.find('\n') + 1);
        std::ofstream(run_dir / "headless.jsonl") << tail;
        CHECK_THROWS_WITH_AS(read_metrics((run_dir / "headless.jsonl").string()),
                             doctest::Contains("header"), IoError);
    }

    SUBCASE("compare cross-checks the ledger") {
        // corrupt the summary's cumulative count
        std::string tampered = full;
        std::size_t pos = tampered.rfind("\"cumulative\":");
        tampered.replace(pos, std::string("\"cumulative\":").size() + 1, "\"cumulative\":9");
        fs::path bad_run = dir / "tampered";
        fs::create_directories(bad_run);
        std::ofstream(bad_run / "metrics.jsonl") << tampered;
        CHECK(run_cli({"compare", bad_run.string()}) == 3);
    }
}

TEST_CASE("compare orders runs by transmitted parameters and writes csv") {
    fs::path dir = work_dir();
    fs::path fm = dir / "cmp_fedmn";
    fs::path fa = dir / "cmp_fedavg";
    REQUIRE(tiny_run(fm.string()) == 0);
    REQUIRE(tiny_run(fa.string(), {"--method", "fedavg"}) == 0);

    fs::path csv = dir / "cmp.csv";
    REQUIRE(run_cli({"compare", fm.string(), fa.string(), "--csv", csv.string()}) == 0);

    std::string text = slurp(csv);
    std::istringstream lines(text);
    std::string header, row1, row2;
    REQUIRE(std::getline(lines, header));
    REQUIRE(std::getline(lines, row1));
    REQUIRE(std::getline(lines, row2));
    CHECK(header == "run,method,rounds,final_acc_mean,final_global_loss,transmitted");
    auto last_field = [](const std::string& row) {
        return std::stoll(row.substr(row.rfind(',') + 1));
    };
    CHECK(last_field(row1) <= last_field(row2));

    SUBCASE("decisions-report rejects runs without routing") {
        CHECK(run_cli({"decisions-report", fa.string()}) == 1);
        CHECK(run_cli({"decisions-report", fm.string()}) == 0);
    }
}

TEST_CASE("checkpoints round-trip bitwise") {
    fs::path dir = work_dir();
    ArchitectureSpec spec;
    spec.layer_widths = {1, 3, 2};
    spec.input_dim = 5;
    spec.encoder_out_dim = 4;
    spec.block_hidden_dim = 6;
    spec.block_out_dim = 4;
    spec.num_classes = 3;
    HypernetDims dims{3, 2, 4};
    ModulePool pool = init_pool(spec, dims, 31);

    fs::path ck = dir / "pool.ck";
    save_pool(ck.string(), pool);
    ModulePool back = load_pool(ck.string());

    CHECK(back.spec.layer_widths == spec.layer_widths);
    CHECK(back.spec.block_hidden_dim == 6);
    CHECK(back.hyp.dims.dx == 3);
    auto pa = pool.all_params();
    auto pb = back.all_params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->name == pb[i]->name);
        CHECK((pa[i]->value - pb[i]->value).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("corrupt checkpoints are rejected") {
        CHECK_THROWS_AS(load_pool((dir / "nope.ck").string()), IoError);
        std::ofstream(dir / "bad.ck") << "not-a-pool v9\n";
        CHECK_THROWS_AS(load_pool((dir / "bad.ck").string()), IoError);
        std::string text = slurp(ck);
        std::ofstream(dir / "cut.ck") << text.substr(0, text.size() / 2);
        CHECK_THROWS_AS(load_pool((dir / "cut.ck").string()), IoError);
    }
}
