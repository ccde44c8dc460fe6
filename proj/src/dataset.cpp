#include "safemil/dataset.hpp"

#include "safemil/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace safemil {

namespace {

/// Lower empirical quantile: the ceil(q*n)-th smallest value.
Scalar empirical_quantile(std::vector<Scalar> values, Scalar q) {
    if (values.empty()) throw ContractError("empirical_quantile: empty sample");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<Scalar>(values.size());
    auto idx = static_cast<std::ptrdiff_t>(std::ceil(q * n)) - 1;
    idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(values.size()) - 1);
    return values[static_cast<std::size_t>(idx)];
}

template <typename T>
std::vector<std::size_t> shuffled_indices(std::size_t n, T& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
    return idx;
}

}  // namespace

std::string role_name(DatasetRole role) {
    switch (role) {
        case DatasetRole::NonPreferred: return "non_preferred";
        case DatasetRole::Unlabeled: return "unlabeled";
        case DatasetRole::EvalOnly: return "eval_only";
    }
    throw ContractError("role_name: unknown role");
}

DatasetRole role_from_name(const std::string& name) {
    if (name == "non_preferred") return DatasetRole::NonPreferred;
    if (name == "unlabeled") return DatasetRole::Unlabeled;
    if (name == "eval_only") return DatasetRole::EvalOnly;
    throw ConfigError("unknown dataset role: " + name);
}

bool TrajectoryDataset::has_annotations() const {
    return !trajectories.empty() && trajectories.front().has_annotations();
}

TrajectoryDataset TrajectoryDataset::training_view() const {
    TrajectoryDataset view;
    view.role = role;
    view.provenance = provenance;
    view.trajectories.reserve(trajectories.size());
    for (const Trajectory& t : trajectories) view.trajectories.push_back(t.training_view());
    return view;
}

std::vector<Trajectory> generate_raw_pool(const TabularCmdp& env, const Policy& safe,
                                          const Policy& risky, int n, Scalar epsilon,
                                          std::uint64_t seed) {
    if (n < 2) throw ConfigError("generate_raw_pool: need at least 2 trajectories");
    if (!(epsilon >= 0.0 && epsilon <= 0.3))
        throw ConfigError("generate_raw_pool: epsilon must lie in [0, 0.3]");

    const Policy noisy_safe = safe.with_exploration(epsilon);
    const Policy noisy_risky = risky.with_exploration(epsilon);
    const int n_safe = n / 2;

    std::vector<Trajectory> pool;
    pool.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n_safe; ++i)
        pool.push_back(rollout(env, noisy_safe, mix_seed(seed, static_cast<std::uint64_t>(i))));
    for (int i = n_safe; i < n; ++i)
        pool.push_back(rollout(env, noisy_risky, mix_seed(seed, static_cast<std::uint64_t>(i))));
    return pool;
}

LabeledPool label_pool(const std::vector<Trajectory>& pool, const LabelRule& rule) {
    if (pool.empty()) throw ContractError("label_pool: empty pool");
    if (!(rule.cost_lo_quantile > 0.0 && rule.cost_lo_quantile < rule.cost_hi_quantile &&
          rule.cost_hi_quantile < 1.0))
        throw ConfigError("label_pool: need 0 < cost_lo < cost_hi < 1");
    for (const Trajectory& t : pool)
        if (!t.has_annotations()) throw ContractError("label_pool: pool lacks annotations");

    std::vector<Scalar> rewards, costs;
    rewards.reserve(pool.size());
    costs.reserve(pool.size());
    for (const Trajectory& t : pool) {
        rewards.push_back(rule.discounted ? t.discounted_reward(rule.gamma) : t.total_reward());
        costs.push_back(rule.discounted ? t.discounted_cost(rule.gamma) : t.total_cost());
    }

    const Scalar reward_cut = empirical_quantile(rewards, rule.reward_quantile);
    const Scalar cost_lo_cut = empirical_quantile(costs, rule.cost_lo_quantile);
    const Scalar cost_hi_cut = empirical_quantile(costs, rule.cost_hi_quantile);
    if (!(cost_lo_cut < cost_hi_cut))
        throw GenerationError(
            "label_pool: cost quantile cuts coincide (no cost spread in the pool); "
            "regenerate with more diverse behavior");

    LabeledPool out;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const bool high_reward = rewards[i] >= reward_cut;
        if (high_reward && costs[i] >= cost_hi_cut) {
            out.non_preferred.push_back(pool[i]);
        } else if (high_reward && costs[i] <= cost_lo_cut) {
            out.preferred.push_back(pool[i]);
        } else {
            out.discarded.push_back(pool[i]);
        }
    }
    if (out.preferred.empty() || out.non_preferred.empty())
        throw GenerationError("label_pool: empty preferred or non-preferred class; "
                              "adjust quantiles or environment");
    return out;
}

AssembledDatasets assemble_datasets(const std::vector<Trajectory>& preferred,
                                    const std::vector<Trajectory>& non_preferred,
                                    int n_unlabeled, int n_negative, Scalar alpha,
                                    std::uint64_t seed) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("assemble_datasets: alpha must lie in (0,1)");
    if (n_unlabeled < 1 || n_negative < 1)
        throw ConfigError("assemble_datasets: counts must be positive");

    const int n_pref_u = static_cast<int>(std::llround(alpha * n_unlabeled));
    const int n_nonpref_u = n_unlabeled - n_pref_u;
    if (n_pref_u < 1 || n_nonpref_u < 0)
        throw ConfigError("assemble_datasets: alpha incompatible with n_unlabeled");
    if (static_cast<int>(preferred.size()) < n_pref_u)
        throw GenerationError("assemble_datasets: only " + std::to_string(preferred.size()) +
                              " preferred trajectories for " + std::to_string(n_pref_u) +
                              " slots");
    if (static_cast<int>(non_preferred.size()) < n_negative + n_nonpref_u)
        throw GenerationError("assemble_datasets: only " + std::to_string(non_preferred.size()) +
                              " non-preferred trajectories for " +
                              std::to_string(n_negative + n_nonpref_u) + " slots");

    Rng rng(seed);
    const auto pref_idx = shuffled_indices(preferred.size(), rng);
    const auto nonpref_idx = shuffled_indices(non_preferred.size(), rng);

    AssembledDatasets out;
    out.negative.role = DatasetRole::NonPreferred;
    for (int i = 0; i < n_negative; ++i) {
        out.negative.trajectories.push_back(non_preferred[nonpref_idx[static_cast<std::size_t>(i)]]);
        out.negative.preferred_provenance.push_back(false);
    }

    std::vector<std::pair<Trajectory, bool>> mix;
    mix.reserve(static_cast<std::size_t>(n_unlabeled));
    for (int i = 0; i < n_pref_u; ++i)
        mix.emplace_back(preferred[pref_idx[static_cast<std::size_t>(i)]], true);
    for (int i = 0; i < n_nonpref_u; ++i)
        mix.emplace_back(non_preferred[nonpref_idx[static_cast<std::size_t>(n_negative + i)]],
                         false);
    const auto order = shuffled_indices(mix.size(), rng);
    out.unlabeled.role = DatasetRole::Unlabeled;
    out.unlabeled.alpha = static_cast<Scalar>(n_pref_u) / static_cast<Scalar>(n_unlabeled);
    for (std::size_t i : order) {
        out.unlabeled.trajectories.push_back(std::move(mix[i].first));
        out.unlabeled.preferred_provenance.push_back(mix[i].second);
    }
    return out;
}

void save_dataset(const TrajectoryDataset& dataset, const std::string& train_path,
                  const std::string& sidecar_path) {
    std::ofstream train(train_path);
    if (!train) throw ConfigError("save_dataset: cannot open " + train_path);
    std::ofstream sidecar(sidecar_path);
    if (!sidecar) throw ConfigError("save_dataset: cannot open " + sidecar_path);

    for (std::size_t i = 0; i < dataset.trajectories.size(); ++i) {
        const Trajectory& t = dataset.trajectories[i];
        nlohmann::json line;
        auto& steps = line["steps"];
        steps = nlohmann::json::array();
        for (const auto& [s, a] : t.steps) steps.push_back({s, a});
        train << line.dump() << '\n';

        nlohmann::json extra;
        extra["rewards"] = t.hidden_rewards;
        extra["costs"] = t.hidden_costs;
        if (i < dataset.preferred_provenance.size())
            extra["preferred"] = static_cast<bool>(dataset.preferred_provenance[i]);
        sidecar << extra.dump() << '\n';
    }
    if (!train || !sidecar) throw ConfigError("save_dataset: write failed");
}

TrajectoryDataset load_dataset(const std::string& train_path, DatasetRole role) {
    std::ifstream in(train_path);
    if (!in) throw ConfigError("load_dataset: cannot open " + train_path);

    TrajectoryDataset dataset;
    dataset.role = role;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(train_path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("steps") || j.size() != 1)
            throw ParseError(train_path + ":" + std::to_string(line_no) +
                             ": training line must contain exactly the \"steps\" key");
        Trajectory t;
        for (const auto& step : j["steps"]) {
            if (!step.is_array() || step.size() != 2)
                throw ParseError(train_path + ":" + std::to_string(line_no) +
                                 ": step entries must be [state, action] pairs");
            t.steps.emplace_back(step[0].get<int>(), step[1].get<int>());
        }
        dataset.trajectories.push_back(std::move(t));
    }
    if (in.bad()) throw ParseError(train_path + ": read failure");
    return dataset;
}

void load_sidecar(TrajectoryDataset& dataset, const std::string& sidecar_path) {
    std::ifstream in(sidecar_path);
    if (!in) throw ConfigError("load_sidecar: cannot open " + sidecar_path);

    std::string line;
    int line_no = 0;
    std::vector<bool> provenance;
    bool any_provenance = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line_no > dataset.size())
            throw ParseError(sidecar_path + ":" + std::to_string(line_no) +
                             ": more sidecar lines than trajectories");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(sidecar_path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        Trajectory& t = dataset.trajectories[static_cast<std::size_t>(line_no - 1)];
        t.hidden_rewards = j.at("rewards").get<std::vector<Scalar>>();
        t.hidden_costs = j.at("costs").get<std::vector<Scalar>>();
        if (t.hidden_rewards.size() != t.steps.size() || t.hidden_costs.size() != t.steps.size())
            throw ParseError(sidecar_path + ":" + std::to_string(line_no) +
                             ": annotation length does not match steps");
        if (j.contains("preferred")) {
            provenance.push_back(j["preferred"].get<bool>());
            any_provenance = true;
        } else {
            provenance.push_back(false);
        }
    }
    if (line_no != dataset.size())
        throw ParseError(sidecar_path + ": expected " + std::to_string(dataset.size()) +
                         " lines, found " + std::to_string(line_no));
    if (any_provenance) dataset.preferred_provenance = std::move(provenance);
}

std::string provenance_hash(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace safemil
