#pragma once

#include "safemil/cmdp.hpp"
#include "safemil/common.hpp"

namespace safemil {

/// Maximizes expected discounted return subject to expected discounted cost
/// <= env.threshold, as a finite-horizon linear program over time-indexed
/// occupancy variables mu_t(s,a). A second lexicographic stage minimizes cost
/// among return-optimal solutions, so ties break toward lower cost. The
/// result may randomize at the constraint boundary.
///
/// Throws InfeasibleError when no policy satisfies the threshold and
/// ConfigError when num_states * num_actions exceeds `size_cap`.
Policy solve_constrained(const TabularCmdp& env, int size_cap = 2048);

/// Finite-horizon value iteration on reward alone; deterministic greedy
/// policy with ties broken toward the lowest action id.
Policy solve_unconstrained(const TabularCmdp& env);

/// Largest expected discounted cost any policy can accrue (value iteration
/// maximizing cost). Useful as a "threshold = infinity" surrogate.
Scalar max_discounted_cost(const TabularCmdp& env);

/// Smallest achievable expected discounted cost; the CMDP is feasible iff
/// this is <= env.threshold.
Scalar min_discounted_cost(const TabularCmdp& env);

}  // namespace safemil
