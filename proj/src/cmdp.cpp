#include "safemil/cmdp.hpp"

#include "safemil/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace safemil {

namespace {

constexpr Scalar kStochasticTol = 1e-9;

void expected_from_realized(TabularCmdp& env) {
    env.reward = Matrix::Zero(env.num_states, env.num_actions);
    env.cost = Matrix::Zero(env.num_states, env.num_actions);
    for (int a = 0; a < env.num_actions; ++a) {
        env.reward.col(a) =
            (env.transition[static_cast<std::size_t>(a)].array() *
             env.step_reward[static_cast<std::size_t>(a)].array())
                .rowwise()
                .sum();
        env.cost.col(a) =
            (env.transition[static_cast<std::size_t>(a)].array() *
             env.step_cost[static_cast<std::size_t>(a)].array())
                .rowwise()
                .sum();
    }
}

}  // namespace

void TabularCmdp::validate() const {
    if (num_states <= 0 || num_actions <= 0) throw ConfigError("cmdp: empty state or action space");
    if (horizon < 1) throw ConfigError("cmdp: horizon must be at least 1");
    if (!(discount > 0.0 && discount < 1.0)) throw ConfigError("cmdp: discount must lie in (0,1)");
    if (threshold < 0.0) throw ConfigError("cmdp: threshold must be non-negative");
    if (static_cast<int>(transition.size()) != num_actions ||
        static_cast<int>(step_reward.size()) != num_actions ||
        static_cast<int>(step_cost.size()) != num_actions)
        throw ConfigError("cmdp: per-action table count mismatch");
    for (const Matrix& p : transition) {
        if (p.rows() != num_states || p.cols() != num_states)
            throw ConfigError("cmdp: transition table shape mismatch");
        if (p.minCoeff() < 0.0) throw ConfigError("cmdp: negative transition probability");
        for (int s = 0; s < num_states; ++s)
            if (std::abs(p.row(s).sum() - 1.0) > kStochasticTol)
                throw ConfigError("cmdp: transition row does not sum to 1");
    }
    if (cost.minCoeff() < 0.0) throw ConfigError("cmdp: negative expected cost");
    for (const Matrix& c : step_cost)
        if (c.minCoeff() < 0.0) throw ConfigError("cmdp: negative realized cost");
    if (initial_dist.size() != num_states || initial_dist.minCoeff() < 0.0 ||
        std::abs(initial_dist.sum() - 1.0) > kStochasticTol)
        throw ConfigError("cmdp: initial distribution is not a distribution");
    if (static_cast<int>(absorbing.size()) != num_states)
        throw ConfigError("cmdp: absorbing flag count mismatch");
}

Scalar Trajectory::total_reward() const {
    Scalar total = 0.0;
    for (Scalar r : hidden_rewards) total += r;
    return total;
}

Scalar Trajectory::total_cost() const {
    Scalar total = 0.0;
    for (Scalar c : hidden_costs) total += c;
    return total;
}

Scalar Trajectory::discounted_reward(Scalar gamma) const {
    Scalar total = 0.0, weight = 1.0;
    for (Scalar r : hidden_rewards) {
        total += weight * r;
        weight *= gamma;
    }
    return total;
}

Scalar Trajectory::discounted_cost(Scalar gamma) const {
    Scalar total = 0.0, weight = 1.0;
    for (Scalar c : hidden_costs) {
        total += weight * c;
        weight *= gamma;
    }
    return total;
}

Trajectory Trajectory::training_view() const {
    Trajectory view;
    view.steps = steps;
    return view;
}

Policy Policy::stationary(Matrix action_probs, PolicyKind kind) {
    Policy p;
    p.kind_ = kind;
    p.tables_.push_back(std::move(action_probs));
    return p;
}

Policy Policy::time_indexed(std::vector<Matrix> per_step_probs, PolicyKind kind) {
    if (per_step_probs.empty()) throw ContractError("Policy: no tables");
    Policy p;
    p.kind_ = kind;
    p.tables_ = std::move(per_step_probs);
    return p;
}

Policy Policy::uniform(int num_states, int num_actions) {
    return stationary(Matrix::Constant(num_states, num_actions, 1.0 / num_actions));
}

int Policy::num_states() const {
    if (tables_.empty()) throw ContractError("Policy: empty");
    return static_cast<int>(tables_.front().rows());
}

int Policy::num_actions() const {
    if (tables_.empty()) throw ContractError("Policy: empty");
    return static_cast<int>(tables_.front().cols());
}

const Matrix& Policy::probs(int t) const {
    if (tables_.empty()) throw ContractError("Policy: empty");
    if (tables_.size() == 1) return tables_.front();
    if (t < 0 || t >= static_cast<int>(tables_.size()))
        throw ContractError("Policy: step index out of range");
    return tables_[static_cast<std::size_t>(t)];
}

std::vector<std::vector<int>> Policy::greedy_actions() const {
    std::vector<std::vector<int>> out;
    for (const Matrix& table : tables_) {
        std::vector<int> per_state(static_cast<std::size_t>(table.rows()));
        for (int s = 0; s < table.rows(); ++s) {
            int best = 0;
            for (int a = 1; a < table.cols(); ++a)
                if (table(s, a) > table(s, best)) best = a;
            per_state[static_cast<std::size_t>(s)] = best;
        }
        out.push_back(std::move(per_state));
    }
    return out;
}

Policy Policy::with_exploration(Scalar eps) const {
    if (eps < 0.0 || eps > 1.0) throw ContractError("with_exploration: eps out of range");
    Policy noisy = *this;
    for (Matrix& table : noisy.tables_) {
        const Scalar u = 1.0 / static_cast<Scalar>(table.cols());
        table = (1.0 - eps) * table.array() + eps * u;
    }
    return noisy;
}

void Policy::validate(const TabularCmdp& env) const {
    if (tables_.empty()) throw ContractError("policy: empty");
    if (tables_.size() != 1 && static_cast<int>(tables_.size()) != env.horizon)
        throw ContractError("policy: table count matches neither 1 nor the horizon");
    for (const Matrix& table : tables_) {
        if (table.rows() != env.num_states || table.cols() != env.num_actions)
            throw ContractError("policy: table shape does not match the environment");
        if (table.minCoeff() < 0.0) throw ContractError("policy: negative action probability");
        for (int s = 0; s < table.rows(); ++s)
            if (std::abs(table.row(s).sum() - 1.0) > kStochasticTol)
                throw ContractError("policy: action probabilities do not sum to 1");
    }
}

TabularCmdp build_speed_chain(int length, int horizon, Scalar threshold, Scalar gamma) {
    if (length < 4) throw ConfigError("speed-chain: length must be at least 4");
    TabularCmdp env;
    env.num_states = length;
    env.num_actions = 3;  // stay, walk, sprint
    env.horizon = horizon;
    env.threshold = threshold;
    env.discount = gamma;
    env.initial_dist = Vector::Zero(length);
    env.initial_dist[0] = 1.0;
    env.absorbing.assign(static_cast<std::size_t>(length), false);

    for (int a = 0; a < env.num_actions; ++a) {
        Matrix p = Matrix::Zero(length, length);
        Matrix r = Matrix::Zero(length, length);
        Matrix c = Matrix::Zero(length, length);
        for (int s = 0; s < length; ++s) {
            const int next = std::min(s + a, length - 1);
            p(s, next) = 1.0;
            r(s, next) = static_cast<Scalar>(next - s);
            c(s, next) = (a == 2) ? 1.0 : 0.0;
        }
        env.transition.push_back(std::move(p));
        env.step_reward.push_back(std::move(r));
        env.step_cost.push_back(std::move(c));
    }
    expected_from_realized(env);
    env.validate();
    return env;
}

TabularCmdp build_hazard_grid(int side, const std::set<int>& hazard_cells, int horizon,
                              Scalar threshold, Scalar gamma, Scalar slip, int start_cell,
                              int goal_cell) {
    if (side < 3) throw ConfigError("hazard-grid: side must be at least 3");
    if (!(slip >= 0.0 && slip < 0.5)) throw ConfigError("hazard-grid: slip must lie in [0, 0.5)");
    const int n = side * side;
    if (start_cell < 0 || start_cell >= n || goal_cell < 0 || goal_cell >= n ||
        start_cell == goal_cell)
        throw ConfigError("hazard-grid: bad start/goal cells");
    for (int h : hazard_cells) {
        if (h < 0 || h >= n) throw ConfigError("hazard-grid: hazard cell out of range");
        if (h == start_cell || h == goal_cell)
            throw ConfigError("hazard-grid: hazard covers start or goal");
    }

    TabularCmdp env;
    env.num_states = n;
    env.num_actions = 4;  // up, down, left, right
    env.horizon = horizon;
    env.threshold = threshold;
    env.discount = gamma;
    env.initial_dist = Vector::Zero(n);
    env.initial_dist[start_cell] = 1.0;
    env.absorbing.assign(static_cast<std::size_t>(n), false);
    env.absorbing[static_cast<std::size_t>(goal_cell)] = true;

    const int dr[4] = {-1, 1, 0, 0};
    const int dc[4] = {0, 0, -1, 1};
    auto target = [&](int cell, int dir) {
        const int r = cell / side, c = cell % side;
        const int nr = r + dr[dir], nc = c + dc[dir];
        if (nr < 0 || nr >= side || nc < 0 || nc >= side) return cell;  // wall: stay put
        return nr * side + nc;
    };

    for (int a = 0; a < 4; ++a) {
        Matrix p = Matrix::Zero(n, n);
        Matrix r = Matrix::Zero(n, n);
        Matrix c = Matrix::Zero(n, n);
        for (int s = 0; s < n; ++s) {
            if (s == goal_cell) {
                p(s, s) = 1.0;
                continue;
            }
            for (int dir = 0; dir < 4; ++dir) {
                const Scalar prob = (dir == a) ? 1.0 - slip : slip / 3.0;
                p(s, target(s, dir)) += prob;
            }
            for (int next = 0; next < n; ++next) {
                r(s, next) = (next == goal_cell) ? 1.0 : -0.01;
                c(s, next) = hazard_cells.count(next) ? 1.0 : 0.0;
            }
        }
        env.transition.push_back(std::move(p));
        env.step_reward.push_back(std::move(r));
        env.step_cost.push_back(std::move(c));
    }
    expected_from_realized(env);
    env.validate();
    return env;
}

Trajectory rollout(const TabularCmdp& env, const Policy& policy, std::uint64_t seed) {
    policy.validate(env);
    Rng rng(seed);
    Trajectory traj;
    traj.steps.reserve(static_cast<std::size_t>(env.horizon));

    int state = rng.categorical(env.initial_dist);
    for (int t = 0; t < env.horizon; ++t) {
        const int action = rng.categorical(policy.probs(t).row(state).transpose());
        const int next = rng.categorical(env.transition[static_cast<std::size_t>(action)]
                                             .row(state)
                                             .transpose());
        traj.steps.emplace_back(state, action);
        traj.hidden_rewards.push_back(env.step_reward[static_cast<std::size_t>(action)](state, next));
        traj.hidden_costs.push_back(env.step_cost[static_cast<std::size_t>(action)](state, next));
        state = next;
        if (env.absorbing[static_cast<std::size_t>(state)]) break;
    }
    return traj;
}

PolicyValue exact_policy_eval_gamma(const TabularCmdp& env, const Policy& policy, Scalar gamma) {
    policy.validate(env);
    Vector value_r = Vector::Zero(env.num_states);
    Vector value_c = Vector::Zero(env.num_states);
    for (int t = env.horizon - 1; t >= 0; --t) {
        const Matrix& pi = policy.probs(t);
        Vector next_r = Vector::Zero(env.num_states);
        Vector next_c = Vector::Zero(env.num_states);
        for (int a = 0; a < env.num_actions; ++a) {
            const Matrix& p = env.transition[static_cast<std::size_t>(a)];
            next_r += pi.col(a).cwiseProduct(env.reward.col(a) + gamma * (p * value_r));
            next_c += pi.col(a).cwiseProduct(env.cost.col(a) + gamma * (p * value_c));
        }
        value_r = std::move(next_r);
        value_c = std::move(next_c);
    }
    return {env.initial_dist.dot(value_r), env.initial_dist.dot(value_c)};
}

PolicyValue exact_policy_eval(const TabularCmdp& env, const Policy& policy) {
    return exact_policy_eval_gamma(env, policy, env.discount);
}

TabularCmdp EnvSpec::build() const {
    if (kind == "speed-chain") return build_speed_chain(length, horizon, threshold, gamma);
    if (kind == "hazard-grid") {
        std::set<int> cells(hazards.begin(), hazards.end());
        return build_hazard_grid(side, cells, horizon, threshold, gamma, slip, start_cell,
                                 goal_cell);
    }
    throw ConfigError("unknown environment kind: " + kind);
}

std::string EnvSpec::to_json() const {
    nlohmann::json j;
    j["kind"] = kind;
    if (kind == "speed-chain") {
        j["length"] = length;
    } else {
        j["side"] = side;
        j["hazards"] = hazards;
        j["slip"] = slip;
        j["start"] = start_cell;
        j["goal"] = goal_cell;
    }
    j["horizon"] = horizon;
    j["threshold"] = threshold;
    j["gamma"] = gamma;
    j["seed"] = seed;
    return j.dump(2);
}

EnvSpec EnvSpec::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("env spec: ") + e.what());
    }
    EnvSpec spec;
    spec.kind = j.at("kind").get<std::string>();
    spec.horizon = j.at("horizon").get<int>();
    spec.threshold = j.at("threshold").get<Scalar>();
    spec.gamma = j.at("gamma").get<Scalar>();
    spec.seed = j.value("seed", 0ULL);
    if (spec.kind == "speed-chain") {
        spec.length = j.at("length").get<int>();
    } else {
        spec.side = j.at("side").get<int>();
        spec.hazards = j.value("hazards", std::vector<int>{});
        spec.slip = j.value("slip", 0.0);
        spec.start_cell = j.value("start", 0);
        spec.goal_cell = j.value("goal", spec.side * spec.side - 1);
    }
    return spec;
}

EnvSpec EnvSpec::default_speed_chain() {
    EnvSpec spec;
    spec.kind = "speed-chain";
    spec.length = 13;
    spec.horizon = 10;
    spec.threshold = 3.5;
    spec.gamma = 0.99;
    spec.seed = 7;
    return spec;
}

EnvSpec EnvSpec::default_hazard_grid() {
    EnvSpec spec;
    spec.kind = "hazard-grid";
    spec.side = 5;
    spec.hazards = {1, 2, 3};
    spec.horizon = 12;
    spec.threshold = 0.5;
    spec.gamma = 0.99;
    spec.slip = 0.1;
    spec.start_cell = 0;
    spec.goal_cell = 4;
    spec.seed = 7;
    return spec;
}

}  // namespace safemil
