#include "safemil/experiment.hpp"

#include "safemil/rng.hpp"
#include "safemil/solver.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace safemil {

namespace {

// ---------------------------------------------------------------------------
// small formatting / io helpers
// ---------------------------------------------------------------------------

std::string shortest_double(Scalar value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw ConfigError("write failed for " + path);
}

long elapsed_ms(const std::chrono::steady_clock::time_point& start) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start)
        .count();
}

// ---------------------------------------------------------------------------
// TOML subset
// ---------------------------------------------------------------------------

struct TomlCursor {
    const std::string& origin;
    int line_no;
    [[noreturn]] void fail(const std::string& message) const {
        throw ParseError(origin + ":" + std::to_string(line_no) + ": " + message);
    }
};

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

nlohmann::json parse_toml_scalar(const std::string& raw, const TomlCursor& at) {
    const std::string token = trim(raw);
    if (token.empty()) at.fail("empty value");
    if (token.front() == '"') {
        if (token.size() < 2 || token.back() != '"') at.fail("unterminated string");
        return token.substr(1, token.size() - 2);
    }
    if (token == "true") return true;
    if (token == "false") return false;
    if (token.find_first_of(".eE") == std::string::npos ||
        (token.size() > 1 && (token[0] == '0' && token[1] == 'x'))) {
        long long iv = 0;
        const auto res = std::from_chars(token.data(), token.data() + token.size(), iv);
        if (res.ec == std::errc() && res.ptr == token.data() + token.size()) return iv;
    }
    double dv = 0.0;
    const auto res = std::from_chars(token.data(), token.data() + token.size(), dv);
    if (res.ec == std::errc() && res.ptr == token.data() + token.size()) return dv;
    at.fail("cannot parse value: " + token);
}

nlohmann::json parse_toml_value(const std::string& raw, const TomlCursor& at) {
    const std::string token = trim(raw);
    if (token.empty()) at.fail("empty value");
    if (token.front() == '[') {
        if (token.back() != ']') at.fail("unterminated array");
        nlohmann::json arr = nlohmann::json::array();
        const std::string inner = token.substr(1, token.size() - 2);
        std::string item;
        bool in_string = false;
        for (char c : inner) {
            if (c == '"') in_string = !in_string;
            if (c == ',' && !in_string) {
                if (!trim(item).empty()) arr.push_back(parse_toml_scalar(item, at));
                item.clear();
            } else {
                item += c;
            }
        }
        if (!trim(item).empty()) arr.push_back(parse_toml_scalar(item, at));
        return arr;
    }
    return parse_toml_scalar(token, at);
}

std::string strip_toml_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

}  // namespace

nlohmann::json parse_toml(const std::string& text, const std::string& origin) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    std::istringstream in(text);
    std::string raw;
    TomlCursor at{origin, 0};
    while (std::getline(in, raw)) {
        ++at.line_no;
        const std::string line = trim(strip_toml_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') at.fail("unterminated table header");
            const std::string path = trim(line.substr(1, line.size() - 2));
            if (path.empty()) at.fail("empty table name");
            table = &root;
            std::size_t start = 0;
            while (start <= path.size()) {
                const std::size_t dot = path.find('.', start);
                const std::string part =
                    trim(path.substr(start, dot == std::string::npos ? dot : dot - start));
                if (part.empty()) at.fail("empty table-name component");
                table = &(*table)[part];
                if (dot == std::string::npos) break;
                start = dot + 1;
            }
            if (!table->is_object() && !table->is_null()) at.fail("table redefines a value");
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) at.fail("expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) at.fail("empty key");
        (*table)[key] = parse_toml_value(line.substr(eq + 1), at);
    }
    return root;
}

nlohmann::json parse_toml_file(const std::string& path) {
    return parse_toml(read_file(path), path);
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void maybe_get(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

std::vector<PolicyMethod> methods_from_json(const nlohmann::json& arr) {
    std::vector<PolicyMethod> methods;
    for (const auto& m : arr) methods.push_back(method_from_name(m.get<std::string>()));
    if (methods.empty()) throw ConfigError("config: empty method list");
    return methods;
}

std::string methods_to_toml(const std::vector<PolicyMethod>& methods) {
    std::string out = "[";
    for (std::size_t i = 0; i < methods.size(); ++i) {
        if (i) out += ", ";
        out += "\"" + method_name(methods[i]) + "\"";
    }
    return out + "]";
}

template <typename T>
std::string ints_to_toml(const std::vector<T>& values) {
    std::string out = "[";
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(values[i]);
    }
    return out + "]";
}

int method_index(PolicyMethod m) { return static_cast<int>(m); }

}  // namespace

void ExperimentConfig::validate() const {
    env.build();  // throws on bad env parameters
    if (data.pool_size < 2) throw ConfigError("config: data.pool_size must be >= 2");
    if (!(data.epsilon >= 0.0 && data.epsilon <= 0.3))
        throw ConfigError("config: data.epsilon must lie in [0, 0.3]");
    if (!(data.alpha > 0.0 && data.alpha < 1.0))
        throw ConfigError("config: data.alpha must lie in (0,1)");
    if (!(data.cost_lo_quantile > 0.0 && data.cost_lo_quantile < data.cost_hi_quantile &&
          data.cost_hi_quantile < 1.0))
        throw ConfigError("config: data quantiles must satisfy 0 < lo < hi < 1");
    cost.validate();
    policy.validate();
    if (eval.episodes < 1) throw ConfigError("config: eval.episodes must be >= 1");
    if (eval.seeds.empty()) throw ConfigError("config: eval.seeds must be non-empty");
    if (eval.bootstrap_resamples < 1)
        throw ConfigError("config: eval.bootstrap_resamples must be >= 1");
    if (methods.empty()) throw ConfigError("config: methods must be non-empty");
    if (sweep.bag_sizes.empty() || sweep.segment_lens.empty() || sweep.methods.empty())
        throw ConfigError("config: sweep lists must be non-empty");
    if (sweep.jobs < 1) throw ConfigError("config: sweep.jobs must be >= 1");
    if (out_dir.empty()) throw ConfigError("config: output dir must be set");
}

std::string ExperimentConfig::canonical_toml() const {
    std::ostringstream out;
    out << "methods = " << methods_to_toml(methods) << "\n\n";
    out << "[env]\n";
    out << "kind = \"" << env.kind << "\"\n";
    if (env.kind == "speed-chain") {
        out << "length = " << env.length << "\n";
    } else {
        out << "side = " << env.side << "\n";
        out << "hazards = " << ints_to_toml(env.hazards) << "\n";
        out << "slip = " << shortest_double(env.slip) << "\n";
        out << "start = " << env.start_cell << "\n";
        out << "goal = " << env.goal_cell << "\n";
    }
    out << "horizon = " << env.horizon << "\n";
    out << "threshold = " << shortest_double(env.threshold) << "\n";
    out << "gamma = " << shortest_double(env.gamma) << "\n";
    out << "seed = " << env.seed << "\n\n";

    out << "[data]\n";
    out << "pool_size = " << data.pool_size << "\n";
    out << "epsilon = " << shortest_double(data.epsilon) << "\n";
    out << "reward_quantile = " << shortest_double(data.reward_quantile) << "\n";
    out << "cost_hi_quantile = " << shortest_double(data.cost_hi_quantile) << "\n";
    out << "cost_lo_quantile = " << shortest_double(data.cost_lo_quantile) << "\n";
    out << "discounted_labeling = " << (data.discounted_labeling ? "true" : "false") << "\n";
    out << "n_unlabeled = " << data.n_unlabeled << "\n";
    out << "n_negative = " << data.n_negative << "\n";
    out << "alpha = " << shortest_double(data.alpha) << "\n";
    out << "seed = " << data.seed << "\n\n";

    out << "[cost]\n";
    out << "hidden = " << ints_to_toml(cost.hidden) << "\n";
    out << "input_projection = " << cost.input_projection << "\n";
    out << "bag_size = " << cost.bag_size << "\n";
    out << "segment_len = " << cost.segment_len << "\n";
    out << "batch_size = " << cost.batch_size << "\n";
    out << "steps = " << cost.steps << "\n";
    out << "learning_rate = " << shortest_double(cost.learning_rate) << "\n";
    out << "weight_decay = " << shortest_double(cost.weight_decay) << "\n";
    out << "log_interval = " << cost.log_interval << "\n";
    out << "holdout_pairs = " << cost.holdout_pairs << "\n\n";

    out << "[policy]\n";
    out << "hidden = " << ints_to_toml(policy.hidden) << "\n";
    out << "steps = " << policy.steps << "\n";
    out << "batch_size = " << policy.batch_size << "\n";
    out << "learning_rate = " << shortest_double(policy.learning_rate) << "\n";
    out << "weight_decay = " << shortest_double(policy.weight_decay) << "\n";
    out << "beta = " << shortest_double(policy.beta) << "\n";
    out << "eta = " << shortest_double(policy.eta) << "\n";
    out << "hard_threshold = " << shortest_double(policy.hard_threshold) << "\n";
    out << "threshold_fallback = " << (policy.threshold_fallback ? "true" : "false") << "\n";
    out << "segment_len = " << policy.segment_len << "\n";
    out << "aux_steps = " << policy.aux_steps << "\n";
    out << "aux_learning_rate = " << shortest_double(policy.aux_learning_rate) << "\n";
    out << "log_interval = " << policy.log_interval << "\n\n";

    out << "[eval]\n";
    out << "episodes = " << eval.episodes << "\n";
    out << "seeds = " << ints_to_toml(eval.seeds) << "\n";
    out << "bootstrap_resamples = " << eval.bootstrap_resamples << "\n";
    out << "bootstrap_level = " << shortest_double(eval.bootstrap_level) << "\n";
    out << "bootstrap_seed = " << eval.bootstrap_seed << "\n";
    out << "rollout_seed = " << eval.rollout_seed << "\n\n";

    out << "[sweep]\n";
    out << "bag_sizes = " << ints_to_toml(sweep.bag_sizes) << "\n";
    out << "segment_lens = " << ints_to_toml(sweep.segment_lens) << "\n";
    out << "methods = " << methods_to_toml(sweep.methods) << "\n";
    out << "jobs = " << sweep.jobs << "\n\n";

    out << "[output]\n";
    out << "dir = \"" << out_dir << "\"\n";
    return out.str();
}

std::string ExperimentConfig::config_hash() const { return provenance_hash(canonical_toml()); }

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    if (j.contains("methods")) cfg.methods = methods_from_json(j.at("methods"));

    if (j.contains("env")) {
        const auto& e = j.at("env");
        cfg.env.kind = e.value("kind", cfg.env.kind);
        maybe_get(e, "length", cfg.env.length);
        maybe_get(e, "side", cfg.env.side);
        maybe_get(e, "hazards", cfg.env.hazards);
        maybe_get(e, "slip", cfg.env.slip);
        maybe_get(e, "start", cfg.env.start_cell);
        maybe_get(e, "goal", cfg.env.goal_cell);
        maybe_get(e, "horizon", cfg.env.horizon);
        maybe_get(e, "threshold", cfg.env.threshold);
        maybe_get(e, "gamma", cfg.env.gamma);
        maybe_get(e, "seed", cfg.env.seed);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        maybe_get(d, "pool_size", cfg.data.pool_size);
        maybe_get(d, "epsilon", cfg.data.epsilon);
        maybe_get(d, "reward_quantile", cfg.data.reward_quantile);
        maybe_get(d, "cost_hi_quantile", cfg.data.cost_hi_quantile);
        maybe_get(d, "cost_lo_quantile", cfg.data.cost_lo_quantile);
        maybe_get(d, "discounted_labeling", cfg.data.discounted_labeling);
        maybe_get(d, "n_unlabeled", cfg.data.n_unlabeled);
        maybe_get(d, "n_negative", cfg.data.n_negative);
        maybe_get(d, "alpha", cfg.data.alpha);
        maybe_get(d, "seed", cfg.data.seed);
    }
    if (j.contains("cost")) {
        const auto& c = j.at("cost");
        maybe_get(c, "hidden", cfg.cost.hidden);
        maybe_get(c, "input_projection", cfg.cost.input_projection);
        maybe_get(c, "bag_size", cfg.cost.bag_size);
        maybe_get(c, "segment_len", cfg.cost.segment_len);
        maybe_get(c, "batch_size", cfg.cost.batch_size);
        maybe_get(c, "steps", cfg.cost.steps);
        maybe_get(c, "learning_rate", cfg.cost.learning_rate);
        maybe_get(c, "weight_decay", cfg.cost.weight_decay);
        maybe_get(c, "log_interval", cfg.cost.log_interval);
        maybe_get(c, "holdout_pairs", cfg.cost.holdout_pairs);
    }
    if (j.contains("policy")) {
        const auto& p = j.at("policy");
        maybe_get(p, "hidden", cfg.policy.hidden);
        maybe_get(p, "steps", cfg.policy.steps);
        maybe_get(p, "batch_size", cfg.policy.batch_size);
        maybe_get(p, "learning_rate", cfg.policy.learning_rate);
        maybe_get(p, "weight_decay", cfg.policy.weight_decay);
        maybe_get(p, "beta", cfg.policy.beta);
        maybe_get(p, "eta", cfg.policy.eta);
        maybe_get(p, "hard_threshold", cfg.policy.hard_threshold);
        maybe_get(p, "threshold_fallback", cfg.policy.threshold_fallback);
        maybe_get(p, "segment_len", cfg.policy.segment_len);
        maybe_get(p, "aux_steps", cfg.policy.aux_steps);
        maybe_get(p, "aux_learning_rate", cfg.policy.aux_learning_rate);
        maybe_get(p, "log_interval", cfg.policy.log_interval);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        maybe_get(e, "episodes", cfg.eval.episodes);
        maybe_get(e, "seeds", cfg.eval.seeds);
        maybe_get(e, "bootstrap_resamples", cfg.eval.bootstrap_resamples);
        maybe_get(e, "bootstrap_level", cfg.eval.bootstrap_level);
        maybe_get(e, "bootstrap_seed", cfg.eval.bootstrap_seed);
        maybe_get(e, "rollout_seed", cfg.eval.rollout_seed);
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        maybe_get(s, "bag_sizes", cfg.sweep.bag_sizes);
        maybe_get(s, "segment_lens", cfg.sweep.segment_lens);
        if (s.contains("methods")) cfg.sweep.methods = methods_from_json(s.at("methods"));
        maybe_get(s, "jobs", cfg.sweep.jobs);
    }
    if (j.contains("output")) maybe_get(j.at("output"), "dir", cfg.out_dir);

    // keep the derived knobs consistent with the environment
    cfg.cost.gamma = cfg.env.gamma;
    cfg.policy.gamma = cfg.env.gamma;
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::from_toml_file(const std::string& path) {
    return from_json(parse_toml_file(path));
}

ExperimentConfig ExperimentConfig::default_speed_chain() {
    ExperimentConfig cfg;
    cfg.env = EnvSpec::default_speed_chain();
    cfg.cost.gamma = cfg.env.gamma;
    cfg.policy.gamma = cfg.env.gamma;
    cfg.cost.segment_len = 5;
    cfg.out_dir = "runs/speed-chain";
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::default_hazard_grid() {
    ExperimentConfig cfg;
    cfg.env = EnvSpec::default_hazard_grid();
    cfg.cost.gamma = cfg.env.gamma;
    cfg.policy.gamma = cfg.env.gamma;
    cfg.cost.segment_len = 10;  // navigation setting uses longer segments
    cfg.out_dir = "runs/hazard-grid";
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// policy serialization
// ---------------------------------------------------------------------------

std::string policy_to_json(const Policy& policy) {
    nlohmann::json j;
    j["kind"] = policy.kind() == PolicyKind::MlpSoftmax ? "mlp-softmax" : "tabular-stochastic";
    j["stationary"] = policy.is_stationary();
    auto& tables = j["tables"];
    tables = nlohmann::json::array();
    for (const Matrix& table : policy.tables()) {
        nlohmann::json rows = nlohmann::json::array();
        for (int s = 0; s < table.rows(); ++s) {
            nlohmann::json row = nlohmann::json::array();
            for (int a = 0; a < table.cols(); ++a) row.push_back(table(s, a));
            rows.push_back(std::move(row));
        }
        tables.push_back(std::move(rows));
    }
    return j.dump();
}

Policy policy_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("policy json: ") + e.what());
    }
    std::vector<Matrix> tables;
    for (const auto& rows : j.at("tables")) {
        const auto n_rows = rows.size();
        const auto n_cols = rows.empty() ? 0 : rows[0].size();
        Matrix table(n_rows, n_cols);
        for (std::size_t s = 0; s < n_rows; ++s)
            for (std::size_t a = 0; a < n_cols; ++a)
                table(static_cast<int>(s), static_cast<int>(a)) = rows[s][a].get<Scalar>();
        tables.push_back(std::move(table));
    }
    const PolicyKind kind = j.value("kind", "tabular-stochastic") == std::string("mlp-softmax")
                                ? PolicyKind::MlpSoftmax
                                : PolicyKind::TabularStochastic;
    if (tables.size() == 1) return Policy::stationary(std::move(tables.front()), kind);
    return Policy::time_indexed(std::move(tables), kind);
}

// ---------------------------------------------------------------------------
// pipeline stages (in memory)
// ---------------------------------------------------------------------------

SolveArtifacts solve_experts(const ExperimentConfig& config, const TabularCmdp& env) {
    (void)config;
    SolveArtifacts out;
    out.constrained = solve_constrained(env);
    out.unconstrained = solve_unconstrained(env);
    out.reference = exact_policy_eval_gamma(env, out.constrained, 1.0);
    out.reference_discounted = exact_policy_eval(env, out.constrained);
    out.unconstrained_value = exact_policy_eval_gamma(env, out.unconstrained, 1.0);
    const Policy random_policy = Policy::uniform(env.num_states, env.num_actions);
    const PolicyValue random_value = exact_policy_eval_gamma(env, random_policy, 1.0);
    out.random_return = random_value.expected_return;
    out.random_cost = random_value.expected_cost;
    return out;
}

DataArtifacts generate_data(const ExperimentConfig& config, const TabularCmdp& env,
                            const SolveArtifacts& solved) {
    const std::vector<Trajectory> pool =
        generate_raw_pool(env, solved.constrained, solved.unconstrained, config.data.pool_size,
                          config.data.epsilon, config.data.seed);

    LabelRule rule;
    rule.reward_quantile = config.data.reward_quantile;
    rule.cost_hi_quantile = config.data.cost_hi_quantile;
    rule.cost_lo_quantile = config.data.cost_lo_quantile;
    rule.discounted = config.data.discounted_labeling;
    rule.gamma = env.discount;
    const LabeledPool labeled = label_pool(pool, rule);

    AssembledDatasets assembled =
        assemble_datasets(labeled.preferred, labeled.non_preferred, config.data.n_unlabeled,
                          config.data.n_negative, config.data.alpha,
                          mix_seed(config.data.seed, 0xA55E));

    const std::string hash = config.config_hash();
    assembled.negative.provenance = hash;
    assembled.unlabeled.provenance = hash;

    auto class_mean = [](const std::vector<Trajectory>& set, bool cost) {
        Scalar total = 0.0;
        for (const Trajectory& t : set) total += cost ? t.total_cost() : t.total_reward();
        return set.empty() ? 0.0 : total / static_cast<Scalar>(set.size());
    };

    DataArtifacts out;
    out.negative_eval = assembled.negative;
    out.unlabeled_eval = assembled.unlabeled;
    out.negative = assembled.negative.training_view();
    out.unlabeled = assembled.unlabeled.training_view();
    out.negative.alpha.reset();
    out.unlabeled.alpha = assembled.unlabeled.alpha;

    out.manifest["provenance"] = hash;
    out.manifest["alpha"] = assembled.unlabeled.alpha.value();
    out.manifest["counts"] = {
        {"pool", config.data.pool_size},
        {"preferred_available", labeled.preferred.size()},
        {"non_preferred_available", labeled.non_preferred.size()},
        {"discarded", labeled.discarded.size()},
        {"unlabeled", assembled.unlabeled.size()},
        {"non_preferred", assembled.negative.size()},
    };
    out.manifest["class_means"] = {
        {"preferred",
         {{"return", class_mean(labeled.preferred, false)},
          {"cost", class_mean(labeled.preferred, true)}}},
        {"non_preferred",
         {{"return", class_mean(labeled.non_preferred, false)},
          {"cost", class_mean(labeled.non_preferred, true)}}},
    };
    out.manifest["roles"] = {{"du", role_name(DatasetRole::Unlabeled)},
                             {"dn", role_name(DatasetRole::NonPreferred)}};
    out.manifest["env"] = nlohmann::json::parse(config.env.to_json());
    return out;
}

TrainArtifacts train_method(const ExperimentConfig& config, const TabularCmdp& env,
                            PolicyMethod method, std::uint64_t seed, const DataArtifacts& data) {
    PolicyLearnConfig pcfg = config.policy;
    pcfg.method = method;
    pcfg.seed = seed;
    pcfg.gamma = env.discount;
    if (data.unlabeled.alpha) pcfg.threshold_quantile = *data.unlabeled.alpha;

    switch (method) {
        case PolicyMethod::SafemilTrajectory:
        case PolicyMethod::SafemilTransition:
        case PolicyMethod::SafemilThreshold: {
            CostModelConfig ccfg = config.cost;
            ccfg.gamma = env.discount;
            ccfg.seed = mix_seed(seed, 0xC057);
            TrainedCostModel cost = train_cost_model(data.negative, data.unlabeled,
                                                     env.num_states, env.num_actions, ccfg);
            TrainedPolicy policy = train_safemil_policy(data.unlabeled, cost.model,
                                                        env.num_states, env.num_actions, pcfg);
            return {std::move(cost), std::nullopt, std::nullopt, std::move(policy)};
        }
        case PolicyMethod::BcUnlabeled:
            return {std::nullopt, std::nullopt, std::nullopt,
                    train_bc_unlabeled(data.unlabeled, env.num_states, env.num_actions, pcfg)};
        case PolicyMethod::TrexWbc: {
            TrexResult res = train_trex_wbc(data.negative, data.unlabeled, env.num_states,
                                            env.num_actions, pcfg);
            return {std::nullopt, std::move(res.reward_model), std::nullopt,
                    std::move(res.policy)};
        }
        case PolicyMethod::DwbcNu: {
            DwbcResult res = train_dwbc_nu(data.negative, data.unlabeled, env.num_states,
                                           env.num_actions, pcfg);
            return {std::nullopt, std::nullopt, std::move(res.discriminator),
                    std::move(res.policy)};
        }
    }
    throw ContractError("train_method: unknown method");
}

EpisodeStats evaluate_run(const ExperimentConfig& config, const TabularCmdp& env,
                          const Policy& policy, PolicyMethod method, std::uint64_t seed) {
    const std::uint64_t rollout_seed = mix_seed(
        mix_seed(config.eval.rollout_seed, static_cast<std::uint64_t>(method_index(method))),
        seed);
    return evaluate_policy(env, policy, config.eval.episodes, rollout_seed);
}

SummaryRow summarize_run(const ExperimentConfig& config, PolicyMethod method,
                         std::uint64_t seed, const EpisodeStats& stats,
                         const SolveArtifacts& solved) {
    SummaryRow row;
    row.method = method_name(method);
    row.env_kind = config.env.kind;
    row.seed = seed;
    row.ret = stats.mean_return();
    row.cost = stats.mean_cost();
    row.cvar50 = cvar_cost(stats.costs, 50.0, solved.reference.expected_cost);
    row.cvar30 = cvar_cost(stats.costs, 30.0, solved.reference.expected_cost);
    row.cvar20 = cvar_cost(stats.costs, 20.0, solved.reference.expected_cost);
    row.cvar10 = cvar_cost(stats.costs, 10.0, solved.reference.expected_cost);
    const NormalizedMetrics norm =
        normalize(row.ret, row.cost, solved.reference, solved.random_return);
    row.norm_return = norm.normalized_return;
    row.norm_cost = norm.normalized_cost;
    return row;
}

// ---------------------------------------------------------------------------
// filesystem commands
// ---------------------------------------------------------------------------

std::string csv_number(Scalar value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", value);
    return buf;
}

namespace {

const char* kSummaryHeader =
    "method,env,seed,return,cost,cvar50,cvar30,cvar20,cvar10,norm_return,norm_cost\n";

std::string summary_row_csv(const SummaryRow& r) {
    std::ostringstream out;
    out << r.method << ',' << r.env_kind << ',' << r.seed << ',' << csv_number(r.ret) << ','
        << csv_number(r.cost) << ',' << csv_number(r.cvar50) << ',' << csv_number(r.cvar30)
        << ',' << csv_number(r.cvar20) << ',' << csv_number(r.cvar10) << ','
        << csv_number(r.norm_return) << ',' << csv_number(r.norm_cost) << '\n';
    return out.str();
}

SummaryRow summary_row_from_json(const nlohmann::json& j) {
    SummaryRow r;
    r.method = j.at("method").get<std::string>();
    r.env_kind = j.at("env").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.ret = j.at("return").get<Scalar>();
    r.cost = j.at("cost").get<Scalar>();
    r.cvar50 = j.at("cvar50").get<Scalar>();
    r.cvar30 = j.at("cvar30").get<Scalar>();
    r.cvar20 = j.at("cvar20").get<Scalar>();
    r.cvar10 = j.at("cvar10").get<Scalar>();
    r.norm_return = j.at("norm_return").get<Scalar>();
    r.norm_cost = j.at("norm_cost").get<Scalar>();
    return r;
}

nlohmann::json summary_row_to_json(const SummaryRow& r, const EpisodeStats& stats) {
    nlohmann::json j;
    j["method"] = r.method;
    j["env"] = r.env_kind;
    j["seed"] = r.seed;
    j["return"] = r.ret;
    j["cost"] = r.cost;
    j["cvar50"] = r.cvar50;
    j["cvar30"] = r.cvar30;
    j["cvar20"] = r.cvar20;
    j["cvar10"] = r.cvar10;
    j["norm_return"] = r.norm_return;
    j["norm_cost"] = r.norm_cost;
    j["episodes"] = {{"returns", stats.returns}, {"costs", stats.costs}};
    return j;
}

std::string run_dir(const ExperimentConfig& cfg, PolicyMethod method, std::uint64_t seed) {
    return cfg.out_dir + "/runs/" + method_name(method) + "/seed" + std::to_string(seed);
}

void write_cost_curve_csv(const std::string& path, const std::vector<CostCurvePoint>& curve) {
    std::ostringstream out;
    out << "step,loss,holdout_pair_accuracy\n";
    for (const CostCurvePoint& p : curve)
        out << p.step << ',' << csv_number(p.loss) << ',' << csv_number(p.holdout_pair_accuracy)
            << '\n';
    write_file(path, out.str());
}

void write_policy_curve_csv(const std::string& path,
                            const std::vector<std::pair<long, Scalar>>& curve) {
    std::ostringstream out;
    out << "step,objective\n";
    for (const auto& [step, value] : curve) out << step << ',' << csv_number(value) << '\n';
    write_file(path, out.str());
}

SolveArtifacts load_solve_artifacts(const ExperimentConfig& cfg) {
    const std::string dir = cfg.out_dir + "/solve";
    SolveArtifacts out;
    out.constrained = policy_from_json(read_file(dir + "/constrained_policy.json"));
    out.unconstrained = policy_from_json(read_file(dir + "/unconstrained_policy.json"));
    const nlohmann::json ref = nlohmann::json::parse(read_file(dir + "/reference.json"));
    out.reference.expected_return = ref.at("constrained").at("return").get<Scalar>();
    out.reference.expected_cost = ref.at("constrained").at("cost").get<Scalar>();
    out.reference_discounted.expected_return =
        ref.at("constrained").at("discounted_return").get<Scalar>();
    out.reference_discounted.expected_cost =
        ref.at("constrained").at("discounted_cost").get<Scalar>();
    out.unconstrained_value.expected_return = ref.at("unconstrained").at("return").get<Scalar>();
    out.unconstrained_value.expected_cost = ref.at("unconstrained").at("cost").get<Scalar>();
    out.random_return = ref.at("random").at("return").get<Scalar>();
    out.random_cost = ref.at("random").at("cost").get<Scalar>();
    return out;
}

DataArtifacts load_data_artifacts(const ExperimentConfig& cfg) {
    const std::string dir = cfg.out_dir + "/data";
    DataArtifacts out;
    out.manifest = nlohmann::json::parse(read_file(dir + "/manifest.json"));
    out.negative = load_dataset(dir + "/dn.jsonl", DatasetRole::NonPreferred);
    out.unlabeled = load_dataset(dir + "/du.jsonl", DatasetRole::Unlabeled);
    out.unlabeled.alpha = out.manifest.at("alpha").get<Scalar>();
    out.negative.provenance = out.manifest.at("provenance").get<std::string>();
    out.unlabeled.provenance = out.negative.provenance;
    out.negative_eval = out.negative;
    out.unlabeled_eval = out.unlabeled;
    load_sidecar(out.negative_eval, dir + "/dn_eval.jsonl");
    load_sidecar(out.unlabeled_eval, dir + "/du_eval.jsonl");
    return out;
}

}  // namespace

DataArtifacts cmd_gen_data(const ExperimentConfig& config) {
    config.validate();
    const TabularCmdp env = config.env.build();
    const SolveArtifacts solved = solve_experts(config, env);
    DataArtifacts data = generate_data(config, env, solved);

    const std::string dir = config.out_dir + "/data";
    fs::create_directories(dir);
    write_file(config.out_dir + "/config.toml", config.canonical_toml());
    write_file(config.out_dir + "/env.json", config.env.to_json());
    save_dataset(data.negative_eval, dir + "/dn.jsonl", dir + "/dn_eval.jsonl");
    save_dataset(data.unlabeled_eval, dir + "/du.jsonl", dir + "/du_eval.jsonl");
    data.manifest["files"] = {{"dn", "dn.jsonl"},
                              {"dn_sidecar", "dn_eval.jsonl"},
                              {"du", "du.jsonl"},
                              {"du_sidecar", "du_eval.jsonl"}};
    write_file(dir + "/manifest.json", data.manifest.dump(2) + "\n");
    return data;
}

SolveArtifacts cmd_solve(const ExperimentConfig& config) {
    config.validate();
    const TabularCmdp env = config.env.build();
    const SolveArtifacts solved = solve_experts(config, env);

    const std::string dir = config.out_dir + "/solve";
    fs::create_directories(dir);
    write_file(dir + "/constrained_policy.json", policy_to_json(solved.constrained));
    write_file(dir + "/unconstrained_policy.json", policy_to_json(solved.unconstrained));
    nlohmann::json ref;
    ref["constrained"] = {{"return", solved.reference.expected_return},
                          {"cost", solved.reference.expected_cost},
                          {"discounted_return", solved.reference_discounted.expected_return},
                          {"discounted_cost", solved.reference_discounted.expected_cost},
                          {"threshold", config.env.threshold}};
    ref["unconstrained"] = {{"return", solved.unconstrained_value.expected_return},
                            {"cost", solved.unconstrained_value.expected_cost}};
    ref["random"] = {{"return", solved.random_return}, {"cost", solved.random_cost}};
    write_file(dir + "/reference.json", ref.dump(2) + "\n");
    return solved;
}

void cmd_train(const ExperimentConfig& config, PolicyMethod method,
               std::optional<std::uint64_t> seed) {
    config.validate();
    const TabularCmdp env = config.env.build();
    const DataArtifacts data = load_data_artifacts(config);

    std::vector<std::uint64_t> seeds =
        seed ? std::vector<std::uint64_t>{*seed} : config.eval.seeds;
    for (std::uint64_t s : seeds) {
        const auto start = std::chrono::steady_clock::now();
        TrainArtifacts trained = train_method(config, env, method, s, data);
        const std::string dir = run_dir(config, method, s);
        fs::create_directories(dir);

        nlohmann::json record;
        record["method"] = method_name(method);
        record["seed"] = s;
        record["env"] = config.env.kind;
        record["config_hash"] = config.config_hash();
        record["config"] = config.canonical_toml();
        record["final_objective"] = trained.policy.final_objective;
        nlohmann::json artifacts;

        save_checkpoint(trained.policy.model, dir + "/policy.bin", config.policy.steps);
        artifacts["policy"] = "policy.bin";
        write_policy_curve_csv(dir + "/policy_curve.csv", trained.policy.curve);
        artifacts["policy_curve"] = "policy_curve.csv";
        if (trained.cost_model) {
            save_checkpoint(trained.cost_model->model, dir + "/cost_model.bin",
                            config.cost.steps);
            artifacts["cost_model"] = "cost_model.bin";
            write_cost_curve_csv(dir + "/cost_curve.csv", trained.cost_model->curve);
            artifacts["cost_curve"] = "cost_curve.csv";
        }
        if (trained.reward_model) {
            save_checkpoint(*trained.reward_model, dir + "/reward_model.bin",
                            config.policy.aux_steps);
            artifacts["reward_model"] = "reward_model.bin";
        }
        if (trained.discriminator) {
            save_checkpoint(*trained.discriminator, dir + "/discriminator.bin",
                            config.policy.steps);
            artifacts["discriminator"] = "discriminator.bin";
        }
        record["artifacts"] = artifacts;
        record["wall_ms"] = elapsed_ms(start);
        write_file(dir + "/run.json", record.dump(2) + "\n");
    }
}

EvalReport cmd_eval(const ExperimentConfig& config, PolicyMethod method,
                    std::optional<std::uint64_t> seed) {
    config.validate();
    const TabularCmdp env = config.env.build();
    const SolveArtifacts solved = load_solve_artifacts(config);

    std::vector<std::uint64_t> seeds =
        seed ? std::vector<std::uint64_t>{*seed} : config.eval.seeds;
    std::vector<EpisodeStats> per_seed;
    std::ostringstream rows_csv;
    rows_csv << kSummaryHeader;
    for (std::uint64_t s : seeds) {
        const std::string dir = run_dir(config, method, s);
        const Mlp model = load_checkpoint(dir + "/policy.bin");
        if (model.input_dim() != env.num_states)
            throw ContractError("cmd_eval: checkpoint does not match the environment");
        const Policy policy = policy_from_mlp(model, env.num_states);
        EpisodeStats stats = evaluate_run(config, env, policy, method, s);
        const SummaryRow row = summarize_run(config, method, s, stats, solved);
        rows_csv << summary_row_csv(row);
        write_file(dir + "/eval.json", summary_row_to_json(row, stats).dump(2) + "\n");

        // RunRecord gains the eval artifact reference
        const std::string record_path = dir + "/run.json";
        nlohmann::json record = nlohmann::json::parse(read_file(record_path));
        record["artifacts"]["eval"] = "eval.json";
        write_file(record_path, record.dump(2) + "\n");

        per_seed.push_back(std::move(stats));
    }

    EvalReport report = build_eval_report(
        method_name(method), config.env.kind, seeds, std::move(per_seed), solved.reference,
        solved.random_return, config.eval.bootstrap_resamples, config.eval.bootstrap_level,
        config.eval.bootstrap_seed);
    const std::string method_dir = config.out_dir + "/runs/" + method_name(method);
    write_file(method_dir + "/eval.json", report.to_json() + "\n");
    write_file(method_dir + "/summary_rows.csv", rows_csv.str());
    return report;
}

void cmd_sweep(const ExperimentConfig& config) {
    config.validate();
    const TabularCmdp env = config.env.build();
    const SolveArtifacts solved = cmd_solve(config);
    DataArtifacts data;
    if (fs::exists(config.out_dir + "/data/manifest.json")) {
        data = load_data_artifacts(config);
    } else {
        data = cmd_gen_data(config);
    }

    struct Cell {
        int bag_size;
        int segment_len;
        PolicyMethod method;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (int k : config.sweep.bag_sizes)
        for (int h : config.sweep.segment_lens)
            for (PolicyMethod m : config.sweep.methods)
                for (std::uint64_t s : config.eval.seeds) cells.push_back({k, h, m, s});

    std::vector<std::string> rows(cells.size());
    std::vector<std::string> failures(cells.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            const Cell& cell = cells[i];
            const std::string cell_dir = config.out_dir + "/sweep/K" +
                                         std::to_string(cell.bag_size) + "_H" +
                                         std::to_string(cell.segment_len) + "/" +
                                         method_name(cell.method) + "/seed" +
                                         std::to_string(cell.seed);
            try {
                ExperimentConfig cell_cfg = config;
                cell_cfg.cost.bag_size = cell.bag_size;
                cell_cfg.cost.segment_len = cell.segment_len;
                TrainArtifacts trained =
                    train_method(cell_cfg, env, cell.method, cell.seed, data);
                EpisodeStats stats =
                    evaluate_run(cell_cfg, env, trained.policy.policy, cell.method, cell.seed);
                const SummaryRow row =
                    summarize_run(cell_cfg, cell.method, cell.seed, stats, solved);

                fs::create_directories(cell_dir);
                save_checkpoint(trained.policy.model, cell_dir + "/policy.bin",
                                cell_cfg.policy.steps);
                write_file(cell_dir + "/eval.json",
                           summary_row_to_json(row, stats).dump(2) + "\n");

                std::ostringstream line;
                line << config.env.kind << ',' << method_name(cell.method) << ','
                     << cell.bag_size << ',' << cell.segment_len << ',' << cell.seed << ','
                     << csv_number(row.ret) << ',' << csv_number(row.cost) << ','
                     << csv_number(row.cvar20) << ',' << csv_number(row.norm_return) << ','
                     << csv_number(row.norm_cost) << '\n';
                rows[i] = line.str();
            } catch (const std::exception& e) {
                failures[i] = e.what();
                try {
                    fs::create_directories(cell_dir);
                    nlohmann::json fail;
                    fail["error"] = e.what();
                    write_file(cell_dir + "/failed.json", fail.dump(2) + "\n");
                } catch (...) {
                }
            }
        }
    };

    const int jobs = std::max(1, config.sweep.jobs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    std::ostringstream csv;
    csv << "env,method,K,H,seed,return,cost,cvar20,norm_return,norm_cost\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!rows[i].empty()) csv << rows[i];
    }
    write_file(config.out_dir + "/sweep/sweep.csv", csv.str());

    for (std::size_t i = 0; i < cells.size(); ++i)
        if (!failures[i].empty())
            std::cerr << "sweep cell " << i << " failed: " << failures[i] << '\n';
}

void cmd_report(const ExperimentConfig& config) {
    const std::string runs_dir = config.out_dir + "/runs";
    std::vector<SummaryRow> rows;
    std::vector<std::vector<Scalar>> row_costs;  // per-row episode costs (for plot data)
    std::vector<std::string> missing;

    std::vector<std::string> method_names;
    for (PolicyMethod m : config.methods) method_names.push_back(method_name(m));
    std::sort(method_names.begin(), method_names.end());

    for (const std::string& method : method_names) {
        for (std::uint64_t seed : config.eval.seeds) {
            const std::string path =
                runs_dir + "/" + method + "/seed" + std::to_string(seed) + "/eval.json";
            if (!fs::exists(path)) {
                missing.push_back(path);
                continue;
            }
            const nlohmann::json j = nlohmann::json::parse(read_file(path));
            rows.push_back(summary_row_from_json(j));
            row_costs.push_back(j.at("episodes").at("costs").get<std::vector<Scalar>>());
        }
    }

    std::ostringstream summary;
    summary << kSummaryHeader;
    for (const SummaryRow& r : rows) summary << summary_row_csv(r);
    write_file(config.out_dir + "/report/summary.csv", summary.str());

    // per-method aggregate table: mean and bootstrap CI over per-seed values
    std::ostringstream table;
    table << "method,n_seeds";
    for (const char* metric : {"return", "cost", "cvar20", "norm_return", "norm_cost"})
        table << ',' << metric << "_mean," << metric << "_lo," << metric << "_hi";
    table << '\n';

    std::ostringstream plot;
    plot << "env,method,k,mean,lo,hi\n";

    std::uint64_t method_counter = 0;
    for (const std::string& method : method_names) {
        std::vector<Scalar> rets, costs, cvar20s, nrets, ncosts;
        std::map<int, std::vector<Scalar>> cvar_by_k;
        for (const SummaryRow& r : rows) {
            if (r.method != method) continue;
            rets.push_back(r.ret);
            costs.push_back(r.cost);
            cvar20s.push_back(r.cvar20);
            nrets.push_back(r.norm_return);
            ncosts.push_back(r.norm_cost);
            cvar_by_k[50].push_back(r.cvar50);
            cvar_by_k[30].push_back(r.cvar30);
            cvar_by_k[20].push_back(r.cvar20);
            cvar_by_k[10].push_back(r.cvar10);
        }
        if (rets.empty()) continue;
        ++method_counter;

        auto mean = [](const std::vector<Scalar>& v) {
            Scalar t = 0.0;
            for (Scalar x : v) t += x;
            return t / static_cast<Scalar>(v.size());
        };
        auto ci = [&](const std::vector<Scalar>& v, std::uint64_t stream) {
            return bootstrap_ci(v, config.eval.bootstrap_resamples, config.eval.bootstrap_level,
                                mix_seed(config.eval.bootstrap_seed,
                                         method_counter * 1000 + stream));
        };

        table << method << ',' << rets.size();
        std::uint64_t stream = 0;
        const std::vector<Scalar>* groups[] = {&rets, &costs, &cvar20s, &nrets, &ncosts};
        for (const auto* g : groups) {
            const BootstrapInterval interval = ci(*g, stream++);
            table << ',' << csv_number(mean(*g)) << ',' << csv_number(interval.lo) << ','
                  << csv_number(interval.hi);
        }
        table << '\n';

        for (int k : {50, 30, 20, 10}) {
            const BootstrapInterval interval = ci(cvar_by_k[k], 100 + static_cast<std::uint64_t>(k));
            plot << config.env.kind << ',' << method << ',' << k << ','
                 << csv_number(mean(cvar_by_k[k])) << ',' << csv_number(interval.lo) << ','
                 << csv_number(interval.hi) << '\n';
        }
    }

    write_file(config.out_dir + "/report/table_" + config.env.kind + ".csv", table.str());
    write_file(config.out_dir + "/report/plot_cvar.csv", plot.str());

    for (const std::string& path : missing) std::cerr << "report: missing " << path << '\n';
}

void run_suite(const ExperimentConfig& config) {
    cmd_gen_data(config);
    cmd_solve(config);
    for (PolicyMethod method : config.methods) {
        cmd_train(config, method);
        cmd_eval(config, method);
    }
    cmd_report(config);
}

}  // namespace safemil
