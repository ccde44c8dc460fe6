#include "safemil/metrics.hpp"

#include "safemil/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace safemil {

namespace {

Scalar mean_of(const std::vector<Scalar>& values) {
    if (values.empty()) throw ContractError("mean of empty vector");
    return std::accumulate(values.begin(), values.end(), Scalar(0.0)) /
           static_cast<Scalar>(values.size());
}

/// Percentile with linear interpolation over sorted data.
Scalar percentile(const std::vector<Scalar>& sorted, Scalar q) {
    if (sorted.empty()) throw ContractError("percentile of empty vector");
    if (sorted.size() == 1) return sorted.front();
    const Scalar pos = q * static_cast<Scalar>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const Scalar frac = pos - std::floor(pos);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

BootstrapInterval interval_from_replicates(std::vector<Scalar> replicates, Scalar level) {
    std::sort(replicates.begin(), replicates.end());
    BootstrapInterval ci;
    ci.lo = percentile(replicates, (1.0 - level) / 2.0);
    ci.hi = percentile(replicates, (1.0 + level) / 2.0);
    return ci;
}

}  // namespace

Scalar EpisodeStats::mean_return() const { return mean_of(returns); }
Scalar EpisodeStats::mean_cost() const { return mean_of(costs); }

EpisodeStats evaluate_policy(const TabularCmdp& env, const Policy& policy, int episodes,
                             std::uint64_t seed) {
    if (episodes < 1) throw ContractError("evaluate_policy: episodes must be >= 1");
    policy.validate(env);

    EpisodeStats stats;
    stats.returns.reserve(static_cast<std::size_t>(episodes));
    for (int e = 0; e < episodes; ++e) {
        const Trajectory traj =
            rollout(env, policy, mix_seed(seed, static_cast<std::uint64_t>(e)));
        stats.returns.push_back(traj.total_reward());
        stats.costs.push_back(traj.total_cost());
        stats.discounted_returns.push_back(traj.discounted_reward(env.discount));
        stats.discounted_costs.push_back(traj.discounted_cost(env.discount));
    }
    return stats;
}

NormalizedMetrics normalize(Scalar raw_return, Scalar raw_cost, const PolicyValue& reference,
                            Scalar random_return) {
    const Scalar denom = reference.expected_return - random_return;
    if (std::abs(denom) < 1e-12)
        throw ConfigError("normalize: reference and random returns coincide");
    return {(raw_return - random_return) / denom, raw_cost - reference.expected_cost};
}

Scalar cvar_cost(const std::vector<Scalar>& episode_costs, Scalar k_percent,
                 Scalar reference_cost) {
    if (episode_costs.empty()) throw ContractError("cvar_cost: empty input");
    if (!(k_percent > 0.0 && k_percent <= 100.0))
        throw ContractError("cvar_cost: k must lie in (0, 100]");
    const auto n = episode_costs.size();
    const auto tail =
        static_cast<std::size_t>(std::ceil(static_cast<Scalar>(n) * k_percent / 100.0));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        if (episode_costs[i] != episode_costs[j]) return episode_costs[i] > episode_costs[j];
        return i < j;
    });

    Scalar total = 0.0;
    for (std::size_t i = 0; i < tail; ++i) total += episode_costs[order[i]];
    return total / static_cast<Scalar>(tail) - reference_cost;
}

BootstrapInterval bootstrap_ci(const std::vector<Scalar>& values, int resamples, Scalar level,
                               std::uint64_t seed) {
    if (values.empty()) throw ContractError("bootstrap_ci: empty input");
    if (resamples < 1) throw ContractError("bootstrap_ci: resamples must be >= 1");
    if (!(level > 0.0 && level < 1.0)) throw ContractError("bootstrap_ci: bad level");
    if (values.size() == 1) return {values.front(), values.front(), true};

    Rng rng(seed);
    const int n = static_cast<int>(values.size());
    std::vector<Scalar> replicates(static_cast<std::size_t>(resamples));
    for (int r = 0; r < resamples; ++r) {
        Scalar total = 0.0;
        for (int i = 0; i < n; ++i) total += values[static_cast<std::size_t>(rng.uniform_int(n))];
        replicates[static_cast<std::size_t>(r)] = total / n;
    }
    return interval_from_replicates(std::move(replicates), level);
}

BootstrapInterval bootstrap_ci_hierarchical(const std::vector<std::vector<Scalar>>& per_seed,
                                            int resamples, Scalar level, std::uint64_t seed) {
    if (per_seed.empty()) throw ContractError("bootstrap_ci_hierarchical: empty input");
    for (const auto& v : per_seed)
        if (v.empty()) throw ContractError("bootstrap_ci_hierarchical: empty seed group");

    Rng rng(seed);
    const int groups = static_cast<int>(per_seed.size());
    std::vector<Scalar> replicates(static_cast<std::size_t>(resamples));
    for (int r = 0; r < resamples; ++r) {
        Scalar total = 0.0;
        long count = 0;
        for (int g = 0; g < groups; ++g) {
            const auto& chosen = per_seed[static_cast<std::size_t>(rng.uniform_int(groups))];
            const int n = static_cast<int>(chosen.size());
            for (int i = 0; i < n; ++i) {
                total += chosen[static_cast<std::size_t>(rng.uniform_int(n))];
                ++count;
            }
        }
        replicates[static_cast<std::size_t>(r)] = total / static_cast<Scalar>(count);
    }
    BootstrapInterval ci = interval_from_replicates(std::move(replicates), level);
    ci.degenerate = (groups == 1);
    return ci;
}

EvalReport build_eval_report(const std::string& method, const std::string& env_kind,
                             const std::vector<std::uint64_t>& seeds,
                             std::vector<EpisodeStats> per_seed, const PolicyValue& reference,
                             Scalar random_baseline, int resamples, Scalar level,
                             std::uint64_t bootstrap_seed) {
    if (per_seed.empty() || per_seed.size() != seeds.size())
        throw ContractError("build_eval_report: per-seed stats do not match seeds");

    EvalReport report;
    report.method = method;
    report.env_kind = env_kind;
    report.seeds = seeds;

    std::vector<Scalar> pooled_returns, pooled_costs, pooled_dret, pooled_dcost;
    std::vector<std::vector<Scalar>> grouped_returns, grouped_costs, grouped_norm_costs;
    for (const EpisodeStats& s : per_seed) {
        pooled_returns.insert(pooled_returns.end(), s.returns.begin(), s.returns.end());
        pooled_costs.insert(pooled_costs.end(), s.costs.begin(), s.costs.end());
        pooled_dret.insert(pooled_dret.end(), s.discounted_returns.begin(),
                           s.discounted_returns.end());
        pooled_dcost.insert(pooled_dcost.end(), s.discounted_costs.begin(),
                            s.discounted_costs.end());
        grouped_returns.push_back(s.returns);
        grouped_costs.push_back(s.costs);
        std::vector<Scalar> shifted = s.costs;
        for (Scalar& c : shifted) c -= reference.expected_cost;
        grouped_norm_costs.push_back(std::move(shifted));
    }

    report.mean_return = mean_of(pooled_returns);
    report.mean_cost = mean_of(pooled_costs);
    report.mean_discounted_return = mean_of(pooled_dret);
    report.mean_discounted_cost = mean_of(pooled_dcost);
    report.normalized =
        normalize(report.mean_return, report.mean_cost, reference, random_baseline);
    for (int k : {50, 30, 20, 10})
        report.cvar[k] = cvar_cost(pooled_costs, static_cast<Scalar>(k), reference.expected_cost);

    report.return_ci =
        bootstrap_ci_hierarchical(grouped_returns, resamples, level, mix_seed(bootstrap_seed, 1));
    report.cost_ci =
        bootstrap_ci_hierarchical(grouped_costs, resamples, level, mix_seed(bootstrap_seed, 2));
    report.normalized_cost_ci = bootstrap_ci_hierarchical(grouped_norm_costs, resamples, level,
                                                          mix_seed(bootstrap_seed, 3));
    report.reference = reference;
    report.random_baseline = random_baseline;
    return report;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["method"] = method;
    j["env"] = env_kind;
    j["seeds"] = seeds;
    j["mean_return"] = mean_return;
    j["mean_cost"] = mean_cost;
    j["mean_discounted_return"] = mean_discounted_return;
    j["mean_discounted_cost"] = mean_discounted_cost;
    j["normalized_return"] = normalized.normalized_return;
    j["normalized_cost"] = normalized.normalized_cost;
    for (const auto& [k, v] : cvar) j["cvar_cost"][std::to_string(k)] = v;
    j["return_ci"] = {return_ci.lo, return_ci.hi};
    j["cost_ci"] = {cost_ci.lo, cost_ci.hi};
    j["normalized_cost_ci"] = {normalized_cost_ci.lo, normalized_cost_ci.hi};
    j["reference"] = {{"return", reference.expected_return}, {"cost", reference.expected_cost}};
    j["random_baseline"] = random_baseline;
    auto& raw = j["raw"];
    raw = nlohmann::json::array();
    for (std::size_t i = 0; i < per_seed.size(); ++i) {
        nlohmann::json entry;
        entry["seed"] = seeds[i];
        entry["returns"] = per_seed[i].returns;
        entry["costs"] = per_seed[i].costs;
        raw.push_back(std::move(entry));
    }
    return j.dump(2);
}

}  // namespace safemil
