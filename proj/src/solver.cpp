#include "safemil/solver.hpp"

#include "safemil/simplex.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace safemil {

namespace {

/// Backward induction over a chosen per-step table; `maximize` picks the
/// greedy direction, ties resolve to the lowest action id.
Policy greedy_backward_induction(const TabularCmdp& env, const Matrix& per_step, bool maximize) {
    Vector value = Vector::Zero(env.num_states);
    std::vector<Matrix> tables(static_cast<std::size_t>(env.horizon));
    for (int t = env.horizon - 1; t >= 0; --t) {
        Matrix q(env.num_states, env.num_actions);
        for (int a = 0; a < env.num_actions; ++a)
            q.col(a) = per_step.col(a) +
                       env.discount * (env.transition[static_cast<std::size_t>(a)] * value);
        Matrix table = Matrix::Zero(env.num_states, env.num_actions);
        Vector next = Vector::Zero(env.num_states);
        for (int s = 0; s < env.num_states; ++s) {
            int best = 0;
            for (int a = 1; a < env.num_actions; ++a) {
                const bool better = maximize ? q(s, a) > q(s, best) : q(s, a) < q(s, best);
                if (better) best = a;
            }
            table(s, best) = 1.0;
            next[s] = q(s, best);
        }
        tables[static_cast<std::size_t>(t)] = std::move(table);
        value = std::move(next);
    }
    return Policy::time_indexed(std::move(tables));
}

struct OccupancyIndex {
    int num_states, num_actions, horizon;
    int operator()(int t, int s, int a) const {
        return (t * num_states + s) * num_actions + a;
    }
    int total() const { return horizon * num_states * num_actions; }
};

/// Flow constraints of the time-indexed occupancy polytope:
///   sum_a mu_0(s,a) = rho0(s)
///   sum_a mu_t(s,a) = sum_{s',a'} P(s|s',a') mu_{t-1}(s',a')   (t >= 1)
void occupancy_flow(const TabularCmdp& env, const OccupancyIndex& idx, Matrix& lhs, Vector& rhs,
                    std::vector<LpRelation>& rel) {
    const int rows = env.horizon * env.num_states;
    lhs = Matrix::Zero(rows, idx.total());
    rhs = Vector::Zero(rows);
    rel.assign(static_cast<std::size_t>(rows), LpRelation::Equal);

    for (int s = 0; s < env.num_states; ++s) {
        for (int a = 0; a < env.num_actions; ++a) lhs(s, idx(0, s, a)) = 1.0;
        rhs[s] = env.initial_dist[s];
    }
    for (int t = 1; t < env.horizon; ++t) {
        for (int s = 0; s < env.num_states; ++s) {
            const int row = t * env.num_states + s;
            for (int a = 0; a < env.num_actions; ++a) lhs(row, idx(t, s, a)) = 1.0;
            for (int sp = 0; sp < env.num_states; ++sp)
                for (int a = 0; a < env.num_actions; ++a)
                    lhs(row, idx(t - 1, sp, a)) -=
                        env.transition[static_cast<std::size_t>(a)](sp, s);
        }
    }
}

Policy policy_from_occupancy(const TabularCmdp& env, const OccupancyIndex& idx, const Vector& mu) {
    std::vector<Matrix> tables(static_cast<std::size_t>(env.horizon));
    for (int t = 0; t < env.horizon; ++t) {
        Matrix table(env.num_states, env.num_actions);
        for (int s = 0; s < env.num_states; ++s) {
            Vector row(env.num_actions);
            for (int a = 0; a < env.num_actions; ++a)
                row[a] = std::max(mu[idx(t, s, a)], 0.0);
            const Scalar total = row.sum();
            if (total > 1e-12) {
                table.row(s) = row.transpose() / total;
            } else {
                // state unreachable at this step; any valid distribution works
                table.row(s).setConstant(1.0 / env.num_actions);
            }
        }
        tables[static_cast<std::size_t>(t)] = std::move(table);
    }
    return Policy::time_indexed(std::move(tables));
}

}  // namespace

Policy solve_constrained(const TabularCmdp& env, int size_cap) {
    env.validate();
    if (env.num_states * env.num_actions > size_cap)
        throw ConfigError("solve_constrained: instance exceeds the exact-search cap (" +
                          std::to_string(env.num_states * env.num_actions) + " > " +
                          std::to_string(size_cap) + ")");

    const OccupancyIndex idx{env.num_states, env.num_actions, env.horizon};

    Vector discounted_reward(idx.total());
    Vector discounted_cost(idx.total());
    Scalar weight = 1.0;
    for (int t = 0; t < env.horizon; ++t) {
        for (int s = 0; s < env.num_states; ++s)
            for (int a = 0; a < env.num_actions; ++a) {
                discounted_reward[idx(t, s, a)] = weight * env.reward(s, a);
                discounted_cost[idx(t, s, a)] = weight * env.cost(s, a);
            }
        weight *= env.discount;
    }

    LpProblem lp;
    occupancy_flow(env, idx, lp.lhs, lp.rhs, lp.relations);
    const Eigen::Index flow_rows = lp.lhs.rows();
    lp.lhs.conservativeResize(flow_rows + 1, Eigen::NoChange);
    lp.rhs.conservativeResize(flow_rows + 1);
    lp.lhs.row(flow_rows) = discounted_cost.transpose();
    lp.rhs[flow_rows] = env.threshold;
    lp.relations.push_back(LpRelation::LessEqual);
    lp.objective = -discounted_reward;  // simplex minimizes

    LpSolution stage1 = solve_lp(lp);
    if (stage1.status == LpStatus::Infeasible)
        throw InfeasibleError("solve_constrained: no policy satisfies cost threshold " +
                              std::to_string(env.threshold));
    if (stage1.status != LpStatus::Optimal)
        throw TrainingError("solve_constrained: LP did not converge");
    const Scalar best_return = -stage1.objective;

    // Lexicographic stage: among return-optimal occupancies, minimize cost.
    const Scalar lex_slack = 1e-9 * std::max<Scalar>(1.0, std::abs(best_return));
    lp.lhs.conservativeResize(flow_rows + 2, Eigen::NoChange);
    lp.rhs.conservativeResize(flow_rows + 2);
    lp.lhs.row(flow_rows + 1) = discounted_reward.transpose();
    lp.rhs[flow_rows + 1] = best_return - lex_slack;
    lp.relations.push_back(LpRelation::GreaterEqual);
    lp.objective = discounted_cost;

    LpSolution stage2 = solve_lp(lp);
    const Vector& occupancy = (stage2.status == LpStatus::Optimal) ? stage2.x : stage1.x;
    return policy_from_occupancy(env, idx, occupancy);
}

Policy solve_unconstrained(const TabularCmdp& env) {
    env.validate();
    return greedy_backward_induction(env, env.reward, /*maximize=*/true);
}

Scalar max_discounted_cost(const TabularCmdp& env) {
    const Policy worst = greedy_backward_induction(env, env.cost, /*maximize=*/true);
    return exact_policy_eval(env, worst).expected_cost;
}

Scalar min_discounted_cost(const TabularCmdp& env) {
    const Policy best = greedy_backward_induction(env, env.cost, /*maximize=*/false);
    return exact_policy_eval(env, best).expected_cost;
}

}  // namespace safemil
