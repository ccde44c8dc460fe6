#pragma once

// Test-only reference machinery, kept independent of the solver under test:
// exhaustive enumeration of deterministic time-dependent policies and random
// CMDP instance generation.

#include "safemil/cmdp.hpp"
#include "safemil/rng.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace safemil::testing {

struct EnumerationResult {
    bool feasible = false;
    Scalar best_return = -std::numeric_limits<Scalar>::infinity();
    Scalar best_cost = 0.0;  // cost of the best feasible policy
    Scalar min_cost = std::numeric_limits<Scalar>::infinity();
    long policies_checked = 0;
};

/// Brute force over all A^(S*T) deterministic time-dependent policies by
/// forward-propagating the state distribution one decision rule at a time.
inline EnumerationResult enumerate_deterministic(const TabularCmdp& env) {
    const int S = env.num_states;
    const int A = env.num_actions;
    EnumerationResult result;

    // one odometer per depth: recursion below must not share rule state
    std::vector<std::vector<int>> rules(static_cast<std::size_t>(env.horizon),
                                        std::vector<int>(static_cast<std::size_t>(S), 0));
    std::function<void(int, const Vector&, Scalar, Scalar, Scalar)> recurse =
        [&](int t, const Vector& dist, Scalar acc_return, Scalar acc_cost, Scalar weight) {
            if (t == env.horizon) {
                ++result.policies_checked;
                result.min_cost = std::min(result.min_cost, acc_cost);
                if (acc_cost <= env.threshold + 1e-12 && acc_return > result.best_return) {
                    result.feasible = true;
                    result.best_return = acc_return;
                    result.best_cost = acc_cost;
                }
                return;
            }
            // odometer over all decision rules S -> A at this step
            std::vector<int>& rule = rules[static_cast<std::size_t>(t)];
            std::fill(rule.begin(), rule.end(), 0);
            while (true) {
                Scalar step_return = 0.0, step_cost = 0.0;
                Vector next = Vector::Zero(S);
                for (int s = 0; s < S; ++s) {
                    const Scalar p = dist[s];
                    if (p == 0.0) continue;
                    const int a = rule[static_cast<std::size_t>(s)];
                    step_return += p * env.reward(s, a);
                    step_cost += p * env.cost(s, a);
                    next += p * env.transition[static_cast<std::size_t>(a)].row(s).transpose();
                }
                recurse(t + 1, next, acc_return + weight * step_return,
                        acc_cost + weight * step_cost, weight * env.discount);

                int pos = 0;
                while (pos < S) {
                    if (++rule[static_cast<std::size_t>(pos)] < A) break;
                    rule[static_cast<std::size_t>(pos)] = 0;
                    ++pos;
                }
                if (pos == S) break;
            }
        };
    recurse(0, env.initial_dist, 0.0, 0.0, 1.0);
    return result;
}

/// Random dense CMDP with realized tables equal to the expected ones.
inline TabularCmdp random_cmdp(Rng& rng, int num_states, int num_actions, int horizon,
                               Scalar gamma, Scalar threshold) {
    TabularCmdp env;
    env.num_states = num_states;
    env.num_actions = num_actions;
    env.horizon = horizon;
    env.discount = gamma;
    env.threshold = threshold;
    env.absorbing.assign(static_cast<std::size_t>(num_states), false);

    env.reward = Matrix::Zero(num_states, num_actions);
    env.cost = Matrix::Zero(num_states, num_actions);
    for (int s = 0; s < num_states; ++s)
        for (int a = 0; a < num_actions; ++a) {
            env.reward(s, a) = rng.uniform(-1.0, 1.0);
            env.cost(s, a) = rng.bernoulli(0.3) ? 0.0 : rng.uniform01();
        }

    for (int a = 0; a < num_actions; ++a) {
        Matrix p(num_states, num_states);
        for (int s = 0; s < num_states; ++s) {
            Vector row(num_states);
            for (int sp = 0; sp < num_states; ++sp)
                row[sp] = -std::log(1.0 - rng.uniform01() + 1e-12);
            row /= row.sum();
            row[num_states - 1] = 1.0 - row.head(num_states - 1).sum();  // exact row sum
            p.row(s) = row.transpose();
        }
        env.transition.push_back(p);
        Matrix r(num_states, num_states), c(num_states, num_states);
        for (int s = 0; s < num_states; ++s) {
            r.row(s).setConstant(env.reward(s, a));
            c.row(s).setConstant(env.cost(s, a));
        }
        env.step_reward.push_back(std::move(r));
        env.step_cost.push_back(std::move(c));
    }

    Vector init(num_states);
    for (int s = 0; s < num_states; ++s) init[s] = rng.uniform01() + 1e-3;
    init /= init.sum();
    init[num_states - 1] = 1.0 - init.head(num_states - 1).sum();
    env.initial_dist = init;
    env.validate();
    return env;
}

}  // namespace safemil::testing
