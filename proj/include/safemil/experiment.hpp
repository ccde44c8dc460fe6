#pragma once

#include "safemil/cmdp.hpp"
#include "safemil/common.hpp"
#include "safemil/dataset.hpp"
#include "safemil/metrics.hpp"
#include "safemil/mil.hpp"
#include "safemil/mlp.hpp"
#include "safemil/policy_learn.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace safemil {

/// Parses the TOML subset used by experiment configs (tables, key = value,
/// strings, numbers, booleans, flat arrays, # comments) into a JSON object.
/// ParseError messages carry 1-based line numbers.
nlohmann::json parse_toml(const std::string& text, const std::string& origin = "<config>");
nlohmann::json parse_toml_file(const std::string& path);

struct DataConfig {
    int pool_size = 1000;
    Scalar epsilon = 0.15;
    Scalar reward_quantile = 0.5;
    Scalar cost_hi_quantile = 0.75;
    Scalar cost_lo_quantile = 0.25;
    bool discounted_labeling = false;
    int n_unlabeled = 200;
    int n_negative = 50;
    Scalar alpha = 0.5;
    std::uint64_t seed = 11;
};

struct EvalConfig {
    int episodes = 50;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    int bootstrap_resamples = 1000;
    Scalar bootstrap_level = 0.95;
    std::uint64_t bootstrap_seed = 99;
    std::uint64_t rollout_seed = 1234;
};

struct SweepConfig {
    std::vector<int> bag_sizes = {1, 8, 16, 64, 128};
    std::vector<int> segment_lens = {1, 5, 10};
    std::vector<PolicyMethod> methods = {PolicyMethod::SafemilTrajectory};
    int jobs = 1;
};

struct ExperimentConfig {
    EnvSpec env;
    DataConfig data;
    CostModelConfig cost;
    PolicyLearnConfig policy;
    EvalConfig eval;
    SweepConfig sweep;
    std::vector<PolicyMethod> methods = {
        PolicyMethod::SafemilTrajectory, PolicyMethod::SafemilTransition,
        PolicyMethod::SafemilThreshold,  PolicyMethod::BcUnlabeled,
        PolicyMethod::TrexWbc,           PolicyMethod::DwbcNu,
    };
    std::string out_dir = "runs/default";

    void validate() const;
    /// Deterministic TOML dump (fixed key order); its hash stamps artifacts.
    std::string canonical_toml() const;
    std::string config_hash() const;

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_toml_file(const std::string& path);
    static ExperimentConfig default_speed_chain();
    static ExperimentConfig default_hazard_grid();
};

/// Tabular policy serialization (JSON with per-step probability tables).
std::string policy_to_json(const Policy& policy);
Policy policy_from_json(const std::string& text);

struct DataArtifacts {
    TrajectoryDataset negative;       // training view, what trainers see
    TrajectoryDataset unlabeled;      // training view (alpha carried from manifest)
    TrajectoryDataset negative_eval;  // with hidden annotations + provenance
    TrajectoryDataset unlabeled_eval;
    nlohmann::json manifest;
};

struct SolveArtifacts {
    Policy constrained;
    Policy unconstrained;
    PolicyValue reference;             // undiscounted return/cost of the constrained policy
    PolicyValue reference_discounted;
    PolicyValue unconstrained_value;   // undiscounted
    Scalar random_return = 0.0;        // undiscounted uniform-policy return
    Scalar random_cost = 0.0;
};

struct TrainArtifacts {
    std::optional<TrainedCostModel> cost_model;
    std::optional<Mlp> reward_model;
    std::optional<Mlp> discriminator;
    TrainedPolicy policy;
};

/// Per-(method, seed) evaluation row for the summary CSV.
struct SummaryRow {
    std::string method;
    std::string env_kind;
    std::uint64_t seed = 0;
    Scalar ret = 0.0;
    Scalar cost = 0.0;
    Scalar cvar50 = 0.0, cvar30 = 0.0, cvar20 = 0.0, cvar10 = 0.0;
    Scalar norm_return = 0.0;
    Scalar norm_cost = 0.0;
};

// ---- in-memory pipeline (used by the CLI commands, tests, and acceptance) ----

SolveArtifacts solve_experts(const ExperimentConfig& config, const TabularCmdp& env);
DataArtifacts generate_data(const ExperimentConfig& config, const TabularCmdp& env,
                            const SolveArtifacts& solved);
TrainArtifacts train_method(const ExperimentConfig& config, const TabularCmdp& env,
                            PolicyMethod method, std::uint64_t seed, const DataArtifacts& data);
EpisodeStats evaluate_run(const ExperimentConfig& config, const TabularCmdp& env,
                          const Policy& policy, PolicyMethod method, std::uint64_t seed);
SummaryRow summarize_run(const ExperimentConfig& config, PolicyMethod method,
                         std::uint64_t seed, const EpisodeStats& stats,
                         const SolveArtifacts& solved);

// ---- filesystem commands (exit-code semantics live in the CLI tool) ----

/// env.json + datasets + manifest under <out>/. Returns the artifacts.
DataArtifacts cmd_gen_data(const ExperimentConfig& config);

/// Constrained/unconstrained policies and reference values under <out>/solve/.
SolveArtifacts cmd_solve(const ExperimentConfig& config);

/// Checkpoints + curves + RunRecord under <out>/runs/<method>/seed<k>/.
/// Trains every configured seed when `seed` is empty.
void cmd_train(const ExperimentConfig& config, PolicyMethod method,
               std::optional<std::uint64_t> seed = std::nullopt);

/// EvalReport JSON + per-seed summary rows for one method (all seeds with
/// checkpoints when `seed` is empty).
EvalReport cmd_eval(const ExperimentConfig& config, PolicyMethod method,
                    std::optional<std::uint64_t> seed = std::nullopt);

/// Full pipeline per (K, H, method, seed) sweep cell; long-format CSV at
/// <out>/sweep/sweep.csv. Cell failures are recorded and skipped.
void cmd_sweep(const ExperimentConfig& config);

/// Aggregates run artifacts into report/summary.csv, per-env method tables,
/// and CVaR plot data. Idempotent; missing runs are listed, not fatal.
void cmd_report(const ExperimentConfig& config);

/// gen-data, solve, train+eval for every (method, seed), then report.
void run_suite(const ExperimentConfig& config);

/// Fixed-format float used in all CSV output ("%.10g").
std::string csv_number(Scalar value);

}  // namespace safemil
