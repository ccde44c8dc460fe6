#pragma once

#include "safemil/common.hpp"

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace safemil {

/// Finite constrained MDP with dense tables and a single (cost, threshold)
/// constraint pair. `transition[a]` is S x S with row s holding P(s'|s,a).
/// `reward` / `cost` are the S x A expected per-step tables used by exact
/// evaluation; `step_reward[a]` / `step_cost[a]` hold the realized values for
/// a transition (s,a,s') and are what rollouts record. The expected tables are
/// always the transition-weighted average of the realized ones.
struct TabularCmdp {
    int num_states = 0;
    int num_actions = 0;
    int horizon = 0;
    Scalar threshold = 0.0;
    Scalar discount = 0.0;
    std::vector<Matrix> transition;
    Matrix reward;
    Matrix cost;
    std::vector<Matrix> step_reward;
    std::vector<Matrix> step_cost;
    Vector initial_dist;
    std::vector<bool> absorbing;  // rollouts stop after entering one of these

    /// Throws ConfigError if stochasticity, sign, or range invariants fail.
    void validate() const;
};

/// Ordered state-action sequence. Hidden per-step annotations exist only on
/// generated/evaluation data; training views carry empty annotation vectors.
struct Trajectory {
    std::vector<std::pair<int, int>> steps;
    std::vector<Scalar> hidden_rewards;
    std::vector<Scalar> hidden_costs;

    int length() const { return static_cast<int>(steps.size()); }
    bool has_annotations() const { return !hidden_rewards.empty(); }

    Scalar total_reward() const;
    Scalar total_cost() const;
    Scalar discounted_reward(Scalar gamma) const;
    Scalar discounted_cost(Scalar gamma) const;

    /// Copy with hidden annotations removed.
    Trajectory training_view() const;
};

enum class PolicyKind { TabularStochastic, MlpSoftmax };

/// Stochastic policy over a finite CMDP, either stationary (one S x A table)
/// or time-indexed (one table per step). Row s of a table is pi(.|s).
class Policy {
  public:
    Policy() = default;

    static Policy stationary(Matrix action_probs,
                             PolicyKind kind = PolicyKind::TabularStochastic);
    static Policy time_indexed(std::vector<Matrix> per_step_probs,
                               PolicyKind kind = PolicyKind::TabularStochastic);
    static Policy uniform(int num_states, int num_actions);

    bool is_stationary() const { return tables_.size() == 1; }
    int table_count() const { return static_cast<int>(tables_.size()); }
    PolicyKind kind() const { return kind_; }
    int num_states() const;
    int num_actions() const;

    /// Action distribution table at step t (stationary policies ignore t).
    const Matrix& probs(int t) const;
    const std::vector<Matrix>& tables() const { return tables_; }

    /// Greedy action per state per step (lowest action id on ties).
    std::vector<std::vector<int>> greedy_actions() const;

    /// Mixes every row with the uniform distribution: (1-eps) pi + eps/A.
    Policy with_exploration(Scalar eps) const;

    /// Throws ContractError unless shapes match the env and rows are
    /// non-negative and sum to 1 within 1e-9.
    void validate(const TabularCmdp& env) const;

  private:
    PolicyKind kind_ = PolicyKind::TabularStochastic;
    std::vector<Matrix> tables_;
};

/// Builds the chain environment: actions {stay, walk, sprint} advance the
/// position by {0, 1, 2} cells (clamped at the last cell), reward equals cells
/// advanced, sprint costs 1. Deterministic, starts at cell 0.
TabularCmdp build_speed_chain(int length, int horizon, Scalar threshold, Scalar gamma);

/// Builds the n x n grid: 4 move actions, slip probability p of moving in a
/// uniformly random other direction, reward +1 on entering the absorbing goal
/// and -0.01 per step otherwise, cost 1 on entering a hazard cell.
TabularCmdp build_hazard_grid(int side, const std::set<int>& hazard_cells, int horizon,
                              Scalar threshold, Scalar gamma, Scalar slip, int start_cell,
                              int goal_cell);

/// One episode under `policy`; annotates realized rewards/costs and stops
/// early when an absorbing state is entered. Identical seeds give identical
/// trajectories.
Trajectory rollout(const TabularCmdp& env, const Policy& policy, std::uint64_t seed);

struct PolicyValue {
    Scalar expected_return = 0.0;
    Scalar expected_cost = 0.0;
};

/// Exact finite-horizon discounted return and cost under the initial
/// distribution, by backward induction.
PolicyValue exact_policy_eval(const TabularCmdp& env, const Policy& policy);

/// Same recursion with an explicit discount (1.0 gives undiscounted sums).
PolicyValue exact_policy_eval_gamma(const TabularCmdp& env, const Policy& policy, Scalar gamma);

/// Environment description as persisted to JSON (External Interfaces keys:
/// kind, side/length, hazards, horizon, threshold, gamma, slip, seed).
struct EnvSpec {
    std::string kind;  // "speed-chain" | "hazard-grid"
    int length = 13;
    int side = 5;
    std::vector<int> hazards;
    int horizon = 10;
    Scalar threshold = 3.5;
    Scalar gamma = 0.99;
    Scalar slip = 0.1;
    int start_cell = 0;
    int goal_cell = 4;
    std::uint64_t seed = 0;

    TabularCmdp build() const;
    std::string to_json() const;
    static EnvSpec from_json(const std::string& text);

    static EnvSpec default_speed_chain();
    static EnvSpec default_hazard_grid();
};

}  // namespace safemil
