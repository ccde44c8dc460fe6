#pragma once

#include "safemil/cmdp.hpp"
#include "safemil/common.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace safemil {

/// Per-episode sums from independent rollouts (undiscounted plus the
/// discounted variants behind the same call).
struct EpisodeStats {
    std::vector<Scalar> returns;
    std::vector<Scalar> costs;
    std::vector<Scalar> discounted_returns;
    std::vector<Scalar> discounted_costs;

    Scalar mean_return() const;
    Scalar mean_cost() const;
};

/// n rollouts with per-episode seeds derived from `seed`.
EpisodeStats evaluate_policy(const TabularCmdp& env, const Policy& policy, int episodes,
                             std::uint64_t seed);

struct NormalizedMetrics {
    Scalar normalized_return = 0.0;  // (R - R_random) / (R_ref - R_random)
    Scalar normalized_cost = 0.0;    // C - C_ref
};

/// Throws ConfigError when the reference and random returns coincide.
NormalizedMetrics normalize(Scalar raw_return, Scalar raw_cost, const PolicyValue& reference,
                            Scalar random_return);

/// Mean of the ceil(n*k/100) largest episode costs minus reference_cost; ties
/// at the cut resolve by stable (cost desc, episode index asc) order.
Scalar cvar_cost(const std::vector<Scalar>& episode_costs, Scalar k_percent,
                 Scalar reference_cost);

struct BootstrapInterval {
    Scalar lo = 0.0;
    Scalar hi = 0.0;
    bool degenerate = false;  // single input value
};

/// Percentile bootstrap interval of the mean; deterministic under seed.
BootstrapInterval bootstrap_ci(const std::vector<Scalar>& values, int resamples, Scalar level,
                               std::uint64_t seed);

/// Hierarchical variant: resample seeds with replacement, then episodes
/// within each chosen seed, and take the pooled mean per replicate.
BootstrapInterval bootstrap_ci_hierarchical(const std::vector<std::vector<Scalar>>& per_seed,
                                            int resamples, Scalar level, std::uint64_t seed);

/// Full per-policy evaluation artifact (serialized as JSON).
struct EvalReport {
    std::string method;
    std::string env_kind;
    std::vector<std::uint64_t> seeds;
    std::vector<EpisodeStats> per_seed;  // one entry per seed
    Scalar mean_return = 0.0;
    Scalar mean_cost = 0.0;
    Scalar mean_discounted_return = 0.0;
    Scalar mean_discounted_cost = 0.0;
    NormalizedMetrics normalized;
    std::map<int, Scalar> cvar;  // k in {50, 30, 20, 10}
    BootstrapInterval return_ci;
    BootstrapInterval cost_ci;
    BootstrapInterval normalized_cost_ci;
    PolicyValue reference;        // undiscounted return/cost of the constrained policy
    Scalar random_baseline = 0.0; // undiscounted return of the uniform policy

    std::string to_json() const;
};

/// Builds the report from per-seed episode stats: pooled means, normalized
/// metrics, CVaR at {50,30,20,10}%, hierarchical CIs over seeds.
EvalReport build_eval_report(const std::string& method, const std::string& env_kind,
                             const std::vector<std::uint64_t>& seeds,
                             std::vector<EpisodeStats> per_seed, const PolicyValue& reference,
                             Scalar random_baseline, int resamples, Scalar level,
                             std::uint64_t bootstrap_seed);

}  // namespace safemil
