#include "safemil/experiment.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace safemil;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// tiny budget so the full pipeline runs in seconds
ExperimentConfig tiny_config(const std::string& out_dir) {
    ExperimentConfig cfg = ExperimentConfig::default_speed_chain();
    cfg.data.pool_size = 400;
    cfg.cost.steps = 250;
    cfg.cost.bag_size = 16;
    cfg.cost.log_interval = 50;
    cfg.policy.steps = 300;
    cfg.policy.log_interval = 100;
    cfg.policy.aux_steps = 150;
    cfg.eval.episodes = 20;
    cfg.eval.seeds = {0, 1};
    cfg.eval.bootstrap_resamples = 200;
    cfg.methods = {PolicyMethod::SafemilTrajectory, PolicyMethod::BcUnlabeled};
    cfg.out_dir = out_dir;
    cfg.validate();
    return cfg;
}

}  // namespace

TEST_CASE("toml subset: tables, arrays, comments, errors") {
    const std::string text = R"(
# top comment
title = "demo"
count = 42
rate = 1.5e-3
flag = true

[env]            # inline comment
kind = "speed-chain"
hazards = [1, 2, 3]
names = ["a", "b"]

[nested.block]
value = -7
)";
    const nlohmann::json j = parse_toml(text, "test.toml");
    CHECK(j.at("title") == "demo");
    CHECK(j.at("count") == 42);
    CHECK(j.at("rate").get<double>() == doctest::Approx(1.5e-3));
    CHECK(j.at("flag") == true);
    CHECK(j.at("env").at("kind") == "speed-chain");
    CHECK(j.at("env").at("hazards") == nlohmann::json({1, 2, 3}));
    CHECK(j.at("env").at("names") == nlohmann::json({"a", "b"}));
    CHECK(j.at("nested").at("block").at("value") == -7);

    try {
        parse_toml("key value-without-equals\n", "bad.toml");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("bad.toml:1") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_toml("[unterminated\n", "x"), ParseError);
    CHECK_THROWS_AS(parse_toml("k = \"open\n", "x"), ParseError);
}

TEST_CASE("config: canonical dump is a fixed point of the parser") {
    const ExperimentConfig cfg = ExperimentConfig::default_speed_chain();
    const std::string dumped = cfg.canonical_toml();
    const ExperimentConfig reparsed = ExperimentConfig::from_json(parse_toml(dumped));
    CHECK(reparsed.canonical_toml() == dumped);
    CHECK(reparsed.config_hash() == cfg.config_hash());

    const ExperimentConfig grid = ExperimentConfig::default_hazard_grid();
    CHECK(ExperimentConfig::from_json(parse_toml(grid.canonical_toml())).canonical_toml() ==
          grid.canonical_toml());
    CHECK(grid.config_hash() != cfg.config_hash());
}

TEST_CASE("policy json: stationary and time-indexed round trips") {
    Matrix table(2, 3);
    table << 0.2, 0.3, 0.5, 1.0, 0.0, 0.0;
    const Policy p = Policy::stationary(table, PolicyKind::MlpSoftmax);
    const Policy q = policy_from_json(policy_to_json(p));
    CHECK(q.is_stationary());
    CHECK(q.kind() == PolicyKind::MlpSoftmax);
    CHECK((q.probs(0) - table).cwiseAbs().maxCoeff() == 0.0);

    const Policy t = Policy::time_indexed({table, table});
    const Policy t2 = policy_from_json(policy_to_json(t));
    CHECK(t2.table_count() == 2);
    CHECK_THROWS_AS(policy_from_json("{broken"), ParseError);
}

TEST_CASE("gen-data: files, manifest determinism, class-mean ordering" *
          doctest::timeout(300)) {
    const std::string dir = (fs::temp_directory_path() / "safemil_gen_test").string();
    fs::remove_all(dir);
    ExperimentConfig cfg = tiny_config(dir);

    const DataArtifacts data = cmd_gen_data(cfg);
    CHECK(fs::exists(dir + "/data/du.jsonl"));
    CHECK(fs::exists(dir + "/data/du_eval.jsonl"));
    CHECK(fs::exists(dir + "/data/dn.jsonl"));
    CHECK(fs::exists(dir + "/data/dn_eval.jsonl"));
    CHECK(fs::exists(dir + "/data/manifest.json"));
    CHECK(fs::exists(dir + "/env.json"));
    CHECK(data.unlabeled.size() == cfg.data.n_unlabeled);
    CHECK(data.negative.size() == cfg.data.n_negative);

    const auto manifest = nlohmann::json::parse(slurp(dir + "/data/manifest.json"));
    CHECK(manifest.at("class_means").at("non_preferred").at("cost").get<double>() >
          manifest.at("class_means").at("preferred").at("cost").get<double>());
    CHECK(manifest.at("alpha").get<double>() == doctest::Approx(cfg.data.alpha));

    // identical config regenerates an identical manifest
    const std::string first = slurp(dir + "/data/manifest.json");
    fs::remove_all(dir);
    cmd_gen_data(cfg);
    CHECK(slurp(dir + "/data/manifest.json") == first);

    // training views on disk expose only steps
    std::ifstream du(dir + "/data/du.jsonl");
    std::string line;
    std::getline(du, line);
    CHECK(line.find("rewards") == std::string::npos);
    CHECK(line.find("costs") == std::string::npos);

    fs::remove_all(dir);
}

TEST_CASE("full pipeline: runs, records, reports, and repeats byte-identically" *
          doctest::timeout(600)) {
    const std::string dir_a = (fs::temp_directory_path() / "safemil_suite_a").string();
    const std::string dir_b = (fs::temp_directory_path() / "safemil_suite_b").string();
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);

    ExperimentConfig cfg_a = tiny_config(dir_a);
    run_suite(cfg_a);

    CHECK(fs::exists(dir_a + "/report/summary.csv"));
    CHECK(fs::exists(dir_a + "/report/table_speed-chain.csv"));
    CHECK(fs::exists(dir_a + "/report/plot_cvar.csv"));

    // summary header and row count: 2 methods x 2 seeds
    std::istringstream summary(slurp(dir_a + "/report/summary.csv"));
    std::string line;
    std::getline(summary, line);
    CHECK(line ==
          "method,env,seed,return,cost,cvar50,cvar30,cvar20,cvar10,norm_return,norm_cost");
    int rows = 0;
    while (std::getline(summary, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 4);

    // RunRecord invariant: every referenced artifact exists
    for (const char* method : {"safemil-trajectory", "bc-unlabeled"}) {
        for (int seed : {0, 1}) {
            const std::string run_dir =
                dir_a + "/runs/" + method + "/seed" + std::to_string(seed);
            const auto record = nlohmann::json::parse(slurp(run_dir + "/run.json"));
            for (const auto& [key, value] : record.at("artifacts").items())
                CHECK(fs::exists(run_dir + "/" + value.get<std::string>()));
            CHECK(record.at("config_hash").get<std::string>() == cfg_a.config_hash());
        }
    }

    // curve row count equals steps / log_interval
    std::istringstream curve(
        slurp(dir_a + "/runs/safemil-trajectory/seed0/cost_curve.csv"));
    int curve_rows = -1;  // header
    while (std::getline(curve, line))
        if (!line.empty()) ++curve_rows;
    CHECK(curve_rows == cfg_a.cost.steps / cfg_a.cost.log_interval);

    // a second identical run produces byte-identical summary artifacts
    ExperimentConfig cfg_b = tiny_config(dir_b);
    run_suite(cfg_b);
    CHECK(slurp(dir_a + "/report/summary.csv") == slurp(dir_b + "/report/summary.csv"));
    CHECK(slurp(dir_a + "/report/table_speed-chain.csv") ==
          slurp(dir_b + "/report/table_speed-chain.csv"));
    CHECK(slurp(dir_a + "/report/plot_cvar.csv") == slurp(dir_b + "/report/plot_cvar.csv"));

    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("sweep: long-format rows for every cell" * doctest::timeout(600)) {
    const std::string dir = (fs::temp_directory_path() / "safemil_sweep_test").string();
    fs::remove_all(dir);
    ExperimentConfig cfg = tiny_config(dir);
    cfg.sweep.bag_sizes = {1, 8};
    cfg.sweep.segment_lens = {3};
    cfg.sweep.methods = {PolicyMethod::SafemilTrajectory};
    cfg.sweep.jobs = 2;

    cmd_sweep(cfg);
    std::istringstream sweep(slurp(dir + "/sweep/sweep.csv"));
    std::string line;
    std::getline(sweep, line);
    CHECK(line == "env,method,K,H,seed,return,cost,cvar20,norm_return,norm_cost");
    int rows = 0;
    while (std::getline(sweep, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2 * 1 * 1 * 2);  // K x H x methods x seeds

    fs::remove_all(dir);
}

TEST_CASE("config validation failures") {
    ExperimentConfig cfg = ExperimentConfig::default_speed_chain();
    cfg.eval.seeds.clear();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    ExperimentConfig bad_env = ExperimentConfig::default_speed_chain();
    bad_env.env.length = 2;
    CHECK_THROWS_AS(bad_env.validate(), ConfigError);

    ExperimentConfig bad_alpha = ExperimentConfig::default_speed_chain();
    bad_alpha.data.alpha = 1.0;
    CHECK_THROWS_AS(bad_alpha.validate(), ConfigError);
}
