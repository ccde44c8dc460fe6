#pragma once

#include "safemil/common.hpp"

#include <vector>

namespace safemil {

enum class LpRelation { LessEqual, Equal, GreaterEqual };

enum class LpStatus { Optimal, Infeasible, Unbounded, IterationLimit };

/// Linear program: minimize objective . x subject to lhs x (rel) rhs, x >= 0.
struct LpProblem {
    Vector objective;
    Matrix lhs;
    Vector rhs;
    std::vector<LpRelation> relations;
};

struct LpSolution {
    LpStatus status = LpStatus::Infeasible;
    Vector x;
    Scalar objective = 0.0;
};

/// Dense two-phase tableau simplex. Dantzig pricing with a Bland fallback once
/// the iteration count passes a degeneracy threshold, so cycling terminates.
LpSolution solve_lp(const LpProblem& problem, long max_iterations = 200000);

}  // namespace safemil
