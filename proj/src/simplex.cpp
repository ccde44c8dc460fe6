#include "safemil/simplex.hpp"

#include <cmath>
#include <limits>

namespace safemil {

namespace {

constexpr Scalar kPivotTol = 1e-9;
constexpr Scalar kReducedCostTol = 1e-9;
constexpr Scalar kFeasibilityTol = 1e-7;

struct Tableau {
    Matrix body;              // m x (n + 1); last column holds the rhs
    std::vector<int> basis;   // basic variable per row
    int n = 0;                // variable count (without rhs column)

    void pivot(int row, int col) {
        body.row(row) /= body(row, col);
        for (Eigen::Index r = 0; r < body.rows(); ++r) {
            if (r == row) continue;
            const Scalar factor = body(r, col);
            if (factor != 0.0) body.row(r) -= factor * body.row(row);
        }
        basis[static_cast<std::size_t>(row)] = col;
    }
};

/// Reduced costs for objective c over the current basis: c - c_B B^{-1} A,
/// computed by pricing the objective row through the tableau rows.
Vector reduced_costs(const Tableau& tab, const Vector& cost, Scalar* objective_value) {
    Vector reduced = cost;
    Scalar value = 0.0;
    for (Eigen::Index r = 0; r < tab.body.rows(); ++r) {
        const int var = tab.basis[static_cast<std::size_t>(r)];
        const Scalar cb = cost[var];
        if (cb != 0.0) {
            reduced -= cb * tab.body.row(r).head(tab.n).transpose();
            value += cb * tab.body(r, tab.n);
        }
    }
    if (objective_value != nullptr) *objective_value = value;
    return reduced;
}

/// Minimizes cost . x over the tableau's feasible region. `allowed` masks
/// columns eligible to enter (used to freeze artificials in phase 2).
LpStatus run_simplex(Tableau& tab, const Vector& cost, const std::vector<bool>& allowed,
                     long max_iterations) {
    const Eigen::Index m = tab.body.rows();
    const long bland_threshold = max_iterations / 2;
    for (long iter = 0; iter < max_iterations; ++iter) {
        Vector reduced = reduced_costs(tab, cost, nullptr);

        int entering = -1;
        if (iter < bland_threshold) {
            Scalar best = -kReducedCostTol;
            for (int j = 0; j < tab.n; ++j)
                if (allowed[static_cast<std::size_t>(j)] && reduced[j] < best) {
                    best = reduced[j];
                    entering = j;
                }
        } else {  // Bland: first improving column, guarantees termination
            for (int j = 0; j < tab.n; ++j)
                if (allowed[static_cast<std::size_t>(j)] && reduced[j] < -kReducedCostTol) {
                    entering = j;
                    break;
                }
        }
        if (entering < 0) return LpStatus::Optimal;

        int leaving = -1;
        Scalar best_ratio = std::numeric_limits<Scalar>::infinity();
        for (Eigen::Index r = 0; r < m; ++r) {
            const Scalar a = tab.body(r, entering);
            if (a > kPivotTol) {
                const Scalar ratio = tab.body(r, tab.n) / a;
                if (ratio < best_ratio - kPivotTol ||
                    (ratio < best_ratio + kPivotTol && leaving >= 0 &&
                     tab.basis[static_cast<std::size_t>(r)] <
                         tab.basis[static_cast<std::size_t>(leaving)])) {
                    best_ratio = ratio;
                    leaving = static_cast<int>(r);
                }
            }
        }
        if (leaving < 0) return LpStatus::Unbounded;
        tab.pivot(leaving, entering);
    }
    return LpStatus::IterationLimit;
}

}  // namespace

LpSolution solve_lp(const LpProblem& problem, long max_iterations) {
    const Eigen::Index m = problem.lhs.rows();
    const Eigen::Index n_struct = problem.lhs.cols();
    if (problem.rhs.size() != m || static_cast<Eigen::Index>(problem.relations.size()) != m ||
        problem.objective.size() != n_struct)
        throw ContractError("solve_lp: inconsistent problem shapes");

    // Normalize rows to rhs >= 0, then append one slack/surplus per inequality.
    Matrix lhs = problem.lhs;
    Vector rhs = problem.rhs;
    std::vector<LpRelation> rel = problem.relations;
    for (Eigen::Index r = 0; r < m; ++r) {
        if (rhs[r] < 0.0) {
            lhs.row(r) = -lhs.row(r);
            rhs[r] = -rhs[r];
            if (rel[static_cast<std::size_t>(r)] == LpRelation::LessEqual)
                rel[static_cast<std::size_t>(r)] = LpRelation::GreaterEqual;
            else if (rel[static_cast<std::size_t>(r)] == LpRelation::GreaterEqual)
                rel[static_cast<std::size_t>(r)] = LpRelation::LessEqual;
        }
    }

    int n_slack = 0;
    for (LpRelation r : rel)
        if (r != LpRelation::Equal) ++n_slack;

    // Artificial variables give every row a starting basic column; slack
    // columns of <= rows serve directly.
    int n_artificial = 0;
    for (LpRelation r : rel)
        if (r != LpRelation::LessEqual) ++n_artificial;

    const int n_total = static_cast<int>(n_struct) + n_slack + n_artificial;
    Tableau tab;
    tab.n = n_total;
    tab.body = Matrix::Zero(m, n_total + 1);
    tab.body.block(0, 0, m, n_struct) = lhs;
    tab.body.col(n_total) = rhs;
    tab.basis.assign(static_cast<std::size_t>(m), -1);

    int slack_col = static_cast<int>(n_struct);
    int art_col = static_cast<int>(n_struct) + n_slack;
    for (Eigen::Index r = 0; r < m; ++r) {
        switch (rel[static_cast<std::size_t>(r)]) {
            case LpRelation::LessEqual:
                tab.body(r, slack_col) = 1.0;
                tab.basis[static_cast<std::size_t>(r)] = slack_col++;
                break;
            case LpRelation::GreaterEqual:
                tab.body(r, slack_col++) = -1.0;
                tab.body(r, art_col) = 1.0;
                tab.basis[static_cast<std::size_t>(r)] = art_col++;
                break;
            case LpRelation::Equal:
                tab.body(r, art_col) = 1.0;
                tab.basis[static_cast<std::size_t>(r)] = art_col++;
                break;
        }
    }

    LpSolution solution;

    if (n_artificial > 0) {
        Vector phase1_cost = Vector::Zero(n_total);
        for (int j = static_cast<int>(n_struct) + n_slack; j < n_total; ++j) phase1_cost[j] = 1.0;
        std::vector<bool> all(static_cast<std::size_t>(n_total), true);
        const LpStatus status = run_simplex(tab, phase1_cost, all, max_iterations);
        if (status == LpStatus::IterationLimit) {
            solution.status = status;
            return solution;
        }
        Scalar infeasibility = 0.0;
        reduced_costs(tab, phase1_cost, &infeasibility);
        if (infeasibility > kFeasibilityTol) {
            solution.status = LpStatus::Infeasible;
            return solution;
        }
        // Pivot lingering zero-valued artificials out of the basis when possible.
        for (Eigen::Index r = 0; r < m; ++r) {
            const int var = tab.basis[static_cast<std::size_t>(r)];
            if (var >= static_cast<int>(n_struct) + n_slack) {
                for (int j = 0; j < static_cast<int>(n_struct) + n_slack; ++j) {
                    if (std::abs(tab.body(r, j)) > kPivotTol) {
                        tab.pivot(static_cast<int>(r), j);
                        break;
                    }
                }
            }
        }
    }

    Vector phase2_cost = Vector::Zero(n_total);
    phase2_cost.head(n_struct) = problem.objective;
    std::vector<bool> allowed(static_cast<std::size_t>(n_total), true);
    for (int j = static_cast<int>(n_struct) + n_slack; j < n_total; ++j)
        allowed[static_cast<std::size_t>(j)] = false;

    solution.status = run_simplex(tab, phase2_cost, allowed, max_iterations);
    if (solution.status != LpStatus::Optimal) return solution;

    solution.x = Vector::Zero(n_struct);
    for (Eigen::Index r = 0; r < m; ++r) {
        const int var = tab.basis[static_cast<std::size_t>(r)];
        if (var < n_struct) solution.x[var] = tab.body(r, tab.n);
    }
    solution.objective = problem.objective.dot(solution.x);
    return solution;
}

}  // namespace safemil
