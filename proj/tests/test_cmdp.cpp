#include "safemil/cmdp.hpp"
#include "safemil/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace safemil;

namespace {

Policy constant_action_policy(const TabularCmdp& env, int action) {
    Matrix table = Matrix::Zero(env.num_states, env.num_actions);
    table.col(action).setOnes();
    return Policy::stationary(table);
}

/// Single-state, single-action environment with reward 1 and cost 0.
TabularCmdp trivial_env(int horizon, Scalar gamma) {
    TabularCmdp env;
    env.num_states = 1;
    env.num_actions = 1;
    env.horizon = horizon;
    env.discount = gamma;
    env.threshold = 1.0;
    env.transition = {Matrix::Ones(1, 1)};
    env.reward = Matrix::Ones(1, 1);
    env.cost = Matrix::Zero(1, 1);
    env.step_reward = {Matrix::Ones(1, 1)};
    env.step_cost = {Matrix::Zero(1, 1)};
    env.initial_dist = Vector::Ones(1);
    env.absorbing = {false};
    env.validate();
    return env;
}

}  // namespace

TEST_CASE("speed chain: construction and invariants") {
    const TabularCmdp env = build_speed_chain(10, 8, 2.0, 0.99);
    CHECK(env.num_states == 10);
    CHECK(env.num_actions == 3);
    for (const Matrix& p : env.transition)
        for (int s = 0; s < env.num_states; ++s)
            CHECK(std::abs(p.row(s).sum() - 1.0) < 1e-12);
    CHECK(env.cost.minCoeff() >= 0.0);

    CHECK_THROWS_AS(build_speed_chain(3, 8, 2.0, 0.99), ConfigError);
    CHECK_THROWS_AS(build_speed_chain(10, 0, 2.0, 0.99), ConfigError);
    CHECK_THROWS_AS(build_speed_chain(10, 8, 2.0, 1.5), ConfigError);
}

TEST_CASE("speed chain: sprint and walk episodic costs") {
    const TabularCmdp env = build_speed_chain(10, 8, 2.0, 0.99);

    const Policy sprint = constant_action_policy(env, 2);
    const PolicyValue sprint_value = exact_policy_eval_gamma(env, sprint, 1.0);
    CHECK(sprint_value.expected_cost == doctest::Approx(8.0));  // one unit per sprint step
    CHECK(sprint_value.expected_cost > env.threshold);

    const Policy walk = constant_action_policy(env, 1);
    const PolicyValue walk_value = exact_policy_eval_gamma(env, walk, 1.0);
    CHECK(walk_value.expected_cost == doctest::Approx(0.0));
    CHECK(walk_value.expected_cost <= env.threshold);
}

TEST_CASE("hazard grid: shortest path avoids cost when hazards are off-path") {
    // 4x4, start top-left, goal bottom-right, hazard in the opposite corner area
    const TabularCmdp env = build_hazard_grid(4, {3}, 10, 1.0, 0.99, 0.0, 0, 15);

    // move down to the last row, then right
    Matrix table = Matrix::Zero(16, 4);
    for (int cell = 0; cell < 16; ++cell) {
        const int row = cell / 4;
        table(cell, row < 3 ? 1 : 3) = 1.0;  // 1 = down, 3 = right
    }
    const Policy path = Policy::stationary(table);
    const PolicyValue v = exact_policy_eval_gamma(env, path, 1.0);
    CHECK(v.expected_cost == doctest::Approx(0.0));
    CHECK(v.expected_return > 0.9);  // reaches the goal

    CHECK_THROWS_AS(build_hazard_grid(4, {0}, 10, 1.0, 0.99, 0.0, 0, 15), ConfigError);
    CHECK_THROWS_AS(build_hazard_grid(4, {3}, 10, 1.0, 0.99, 0.6, 0, 15), ConfigError);
    CHECK_THROWS_AS(build_hazard_grid(2, {}, 10, 1.0, 0.99, 0.0, 0, 3), ConfigError);
}

TEST_CASE("hazard grid: slip keeps transition rows stochastic") {
    const TabularCmdp env = build_hazard_grid(4, {5, 6}, 10, 1.0, 0.99, 0.1, 0, 15);
    for (const Matrix& p : env.transition)
        for (int s = 0; s < env.num_states; ++s)
            CHECK(std::abs(p.row(s).sum() - 1.0) < 1e-9);
}

TEST_CASE("rollout: determinism and length bounds") {
    const TabularCmdp env = build_speed_chain(10, 8, 2.0, 0.99);
    const Policy walk = constant_action_policy(env, 1);

    const Trajectory a = rollout(env, walk, 7);
    const Trajectory b = rollout(env, walk, 7);
    const Trajectory c = rollout(env, walk, 1234);
    CHECK(a.steps == b.steps);
    CHECK(a.steps == c.steps);  // deterministic env + deterministic policy
    CHECK(a.length() <= env.horizon);
    CHECK(a.hidden_rewards.size() == a.steps.size());
    CHECK(a.hidden_costs.size() == a.steps.size());

    const TabularCmdp grid = build_hazard_grid(4, {5}, 10, 1.0, 0.99, 0.2, 0, 15);
    const Policy uniform = Policy::uniform(grid.num_states, grid.num_actions);
    const Trajectory g1 = rollout(grid, uniform, 99);
    const Trajectory g2 = rollout(grid, uniform, 99);
    CHECK(g1.steps == g2.steps);
    CHECK(g1.length() <= grid.horizon);
}

TEST_CASE("rollout: absorbing goal truncates the episode") {
    const TabularCmdp grid = build_hazard_grid(4, {}, 12, 1.0, 0.99, 0.0, 0, 3);
    // straight along the top row: goal after 3 steps
    Matrix table = Matrix::Zero(16, 4);
    table.col(3).setOnes();
    const Policy right = Policy::stationary(table);
    const Trajectory t = rollout(grid, right, 5);
    CHECK(t.length() == 3);
    CHECK(t.hidden_rewards.back() == doctest::Approx(1.0));
}

TEST_CASE("exact eval: geometric sum on a single-state environment") {
    const int horizon = 7;
    const Scalar gamma = 0.9;
    const TabularCmdp env = trivial_env(horizon, gamma);
    const Policy only = Policy::uniform(1, 1);
    const PolicyValue v = exact_policy_eval(env, only);
    const Scalar expected = (1.0 - std::pow(gamma, horizon)) / (1.0 - gamma);
    CHECK(v.expected_return == doctest::Approx(expected).epsilon(1e-12));
    CHECK(v.expected_cost == doctest::Approx(0.0));
}

TEST_CASE("exact eval: zero-cost environment gives zero cost for any policy") {
    const TabularCmdp env = build_hazard_grid(4, {}, 10, 1.0, 0.99, 0.1, 0, 15);
    Rng rng(3);
    Matrix table(env.num_states, env.num_actions);
    for (int s = 0; s < env.num_states; ++s) {
        Vector row(env.num_actions);
        for (int a = 0; a < env.num_actions; ++a) row[a] = rng.uniform01() + 0.05;
        row /= row.sum();
        row[env.num_actions - 1] = 1.0 - row.head(env.num_actions - 1).sum();
        table.row(s) = row.transpose();
    }
    const PolicyValue v = exact_policy_eval(env, Policy::stationary(table));
    CHECK(v.expected_cost == doctest::Approx(0.0));
}

TEST_CASE("exact eval matches Monte Carlo on the hazard grid" * doctest::timeout(120)) {
    const TabularCmdp env = build_hazard_grid(4, {5, 10}, 10, 1.0, 0.99, 0.15, 0, 15);
    const Policy policy = Policy::uniform(env.num_states, env.num_actions).with_exploration(0.0);
    const PolicyValue exact = exact_policy_eval(env, policy);

    const int n = 10000;
    Scalar sum_cost = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const Trajectory t = rollout(env, policy, mix_seed(42, static_cast<std::uint64_t>(i)));
        const Scalar c = t.discounted_cost(env.discount);
        sum_cost += c;
        sum_sq += c * c;
    }
    const Scalar mean = sum_cost / n;
    const Scalar var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    const Scalar se = std::sqrt(var / n);
    CHECK(std::abs(mean - exact.expected_cost) <= 3.0 * se + 1e-9);
}

TEST_CASE("policy: exploration mixing and validation") {
    const TabularCmdp env = build_speed_chain(8, 5, 1.0, 0.95);
    const Policy walk = constant_action_policy(env, 1);
    const Policy noisy = walk.with_exploration(0.3);
    noisy.validate(env);
    CHECK(noisy.probs(0)(0, 1) == doctest::Approx(0.7 + 0.1));
    CHECK(noisy.probs(0)(0, 0) == doctest::Approx(0.1));

    Matrix bad = Matrix::Zero(env.num_states, env.num_actions);
    bad.col(0).setConstant(0.5);  // rows sum to 0.5
    CHECK_THROWS_AS(Policy::stationary(bad).validate(env), ContractError);

    const Policy wrong_shape = Policy::uniform(3, 2);
    CHECK_THROWS_AS(wrong_shape.validate(env), ContractError);
    CHECK_THROWS_AS(rollout(env, wrong_shape, 0), ContractError);
}

TEST_CASE("env spec: JSON round trip") {
    const EnvSpec chain = EnvSpec::default_speed_chain();
    const EnvSpec chain2 = EnvSpec::from_json(chain.to_json());
    CHECK(chain2.kind == chain.kind);
    CHECK(chain2.length == chain.length);
    CHECK(chain2.horizon == chain.horizon);
    CHECK(chain2.threshold == doctest::Approx(chain.threshold));

    const EnvSpec grid = EnvSpec::default_hazard_grid();
    const EnvSpec grid2 = EnvSpec::from_json(grid.to_json());
    CHECK(grid2.side == grid.side);
    CHECK(grid2.hazards == grid.hazards);
    CHECK(grid2.slip == doctest::Approx(grid.slip));
    CHECK(grid2.goal_cell == grid.goal_cell);

    grid2.build().validate();
    chain2.build().validate();
    CHECK_THROWS_AS(EnvSpec::from_json("{not json"), ParseError);
}

TEST_CASE("trajectory: totals, discounting, training view") {
    Trajectory t;
    t.steps = {{0, 1}, {1, 2}, {2, 0}};
    t.hidden_rewards = {1.0, 2.0, 3.0};
    t.hidden_costs = {0.0, 1.0, 1.0};
    CHECK(t.total_reward() == doctest::Approx(6.0));
    CHECK(t.total_cost() == doctest::Approx(2.0));
    CHECK(t.discounted_cost(0.5) == doctest::Approx(0.5 + 0.25));
    const Trajectory view = t.training_view();
    CHECK(view.steps == t.steps);
    CHECK(!view.has_annotations());
}
