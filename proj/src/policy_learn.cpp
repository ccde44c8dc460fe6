#include "safemil/policy_learn.hpp"

#include "safemil/mil.hpp"
#include "safemil/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace safemil {

namespace {

// rng / init stream ids; the policy streams are shared across methods so the
// constant-weight and zero-weight equivalences hold under a common seed
constexpr std::uint64_t kPolicyBatchStream = 1;
constexpr std::uint64_t kDiscBatchStream = 2;
constexpr std::uint64_t kPolicyInitStream = 3;
constexpr std::uint64_t kDiscInitStream = 4;
constexpr std::uint64_t kRewardInitStream = 5;
constexpr std::uint64_t kRewardBatchStream = 6;

constexpr Scalar kDiscClampLo = 0.05;
constexpr Scalar kDiscClampHi = 0.95;

Scalar sigmoid(Scalar x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const Scalar e = std::exp(x);
    return e / (1.0 + e);
}

Scalar softplus(Scalar x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

std::vector<int> weight_support(const BcData& data) {
    std::vector<int> support;
    for (int i = 0; i < data.size(); ++i) {
        const Scalar w = data.weights[static_cast<std::size_t>(i)];
        if (w < 0.0) throw ContractError("train_bc: negative weight");
        if (w > 0.0) support.push_back(i);
    }
    if (support.empty()) throw ContractError("train_bc: all weights are zero");
    return support;
}

std::vector<int> make_policy_layers(int num_states, int num_actions,
                                    const std::vector<int>& hidden) {
    std::vector<int> layers;
    layers.push_back(num_states);
    for (int h : hidden) layers.push_back(h);
    layers.push_back(num_actions);
    return layers;
}

Matrix all_state_action_inputs(int num_states, int num_actions) {
    Matrix inputs = Matrix::Zero(num_states + num_actions, num_states * num_actions);
    for (int s = 0; s < num_states; ++s)
        for (int a = 0; a < num_actions; ++a) {
            inputs(s, s * num_actions + a) = 1.0;
            inputs(num_states + a, s * num_actions + a) = 1.0;
        }
    return inputs;
}

/// One weighted-NLL update on a sampled batch; returns the batch objective.
Scalar bc_step(Mlp& model, AdamW& optimizer, const BcData& data,
               const std::vector<int>& support, const std::vector<Scalar>& batch_weights,
               const std::vector<int>& batch_indices, int num_states, Vector& grad) {
    const int batch = static_cast<int>(batch_indices.size());
    Matrix inputs = Matrix::Zero(num_states, batch);
    for (int b = 0; b < batch; ++b)
        inputs(data.states[static_cast<std::size_t>(batch_indices[static_cast<std::size_t>(b)])],
               b) = 1.0;

    Mlp::Cache cache;
    const Matrix log_probs = model.log_softmax_batch(inputs, cache);

    Scalar loss = 0.0;
    Matrix grad_logits(log_probs.rows(), batch);
    for (int b = 0; b < batch; ++b) {
        const int idx = batch_indices[static_cast<std::size_t>(b)];
        const int action = data.actions[static_cast<std::size_t>(idx)];
        const Scalar w = batch_weights.empty()
                             ? data.weights[static_cast<std::size_t>(idx)]
                             : batch_weights[static_cast<std::size_t>(b)];
        loss += -w * log_probs(action, b);
        Vector probs = log_probs.col(b).array().exp();
        probs[action] -= 1.0;
        grad_logits.col(b) = (w / batch) * probs;
    }
    loss /= batch;
    if (!std::isfinite(loss))
        throw TrainingError("behavior cloning: non-finite objective");

    grad.setZero();
    model.backward_logits_batch(cache, grad_logits, grad);
    optimizer.step(model.params(), grad);
    (void)support;
    return loss;
}

}  // namespace

std::string method_name(PolicyMethod method) {
    switch (method) {
        case PolicyMethod::SafemilTrajectory: return "safemil-trajectory";
        case PolicyMethod::SafemilTransition: return "safemil-transition";
        case PolicyMethod::SafemilThreshold: return "safemil-threshold";
        case PolicyMethod::BcUnlabeled: return "bc-unlabeled";
        case PolicyMethod::TrexWbc: return "trex-wbc";
        case PolicyMethod::DwbcNu: return "dwbc-nu";
    }
    throw ContractError("method_name: unknown method");
}

PolicyMethod method_from_name(const std::string& name) {
    if (name == "safemil-trajectory") return PolicyMethod::SafemilTrajectory;
    if (name == "safemil-transition") return PolicyMethod::SafemilTransition;
    if (name == "safemil-threshold") return PolicyMethod::SafemilThreshold;
    if (name == "bc-unlabeled") return PolicyMethod::BcUnlabeled;
    if (name == "trex-wbc") return PolicyMethod::TrexWbc;
    if (name == "dwbc-nu") return PolicyMethod::DwbcNu;
    throw ConfigError("unknown policy method: " + name);
}

bool method_needs_cost_model(PolicyMethod method) {
    return method == PolicyMethod::SafemilTrajectory ||
           method == PolicyMethod::SafemilTransition ||
           method == PolicyMethod::SafemilThreshold;
}

void PolicyLearnConfig::validate() const {
    if (beta <= 0.0) throw ConfigError("policy config: beta must be positive");
    if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("policy config: eta must lie in (0,1)");
    if (steps < 1 || batch_size < 1) throw ConfigError("policy config: steps/batch must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("policy config: learning rate must be positive");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("policy config: gamma must lie in (0,1)");
    if (segment_len < 1) throw ConfigError("policy config: segment length must be >= 1");
    if (aux_steps < 1) throw ConfigError("policy config: aux steps must be >= 1");
}

void BcData::push(int s, int a, Scalar w) {
    states.push_back(s);
    actions.push_back(a);
    weights.push_back(w);
}

BcData flatten_dataset(const TrajectoryDataset& dataset,
                       const std::vector<Scalar>& per_trajectory_weights) {
    if (!per_trajectory_weights.empty() &&
        per_trajectory_weights.size() != dataset.trajectories.size())
        throw ContractError("flatten_dataset: weight count mismatch");
    BcData data;
    for (std::size_t i = 0; i < dataset.trajectories.size(); ++i) {
        const Scalar w = per_trajectory_weights.empty() ? 1.0 : per_trajectory_weights[i];
        for (const auto& [s, a] : dataset.trajectories[i].steps) data.push(s, a, w);
    }
    return data;
}

Scalar trajectory_weight(const Mlp& cost_model, const Trajectory& trajectory, Scalar gamma,
                         Scalar beta, int num_states, int num_actions) {
    if (beta <= 0.0) throw ContractError("trajectory_weight: beta must be positive");
    const Matrix table = cost_table_from_model(cost_model, num_states, num_actions);
    Scalar cost = 0.0, weight = 1.0;
    for (const auto& [s, a] : trajectory.steps) {
        cost += weight * table(s, a);
        weight *= gamma;
    }
    return std::exp(-cost / beta);
}

std::vector<int> select_preferred(const Mlp& cost_model, const TrajectoryDataset& unlabeled,
                                  Scalar gamma, Scalar threshold, int num_states,
                                  int num_actions) {
    if (threshold < 0.0) throw ContractError("select_preferred: threshold must be >= 0");
    const Matrix table = cost_table_from_model(cost_model, num_states, num_actions);
    std::vector<int> selected;
    for (int i = 0; i < unlabeled.size(); ++i) {
        Scalar cost = 0.0, weight = 1.0;
        for (const auto& [s, a] : unlabeled.trajectories[static_cast<std::size_t>(i)].steps) {
            cost += weight * table(s, a);
            weight *= gamma;
        }
        if (cost <= threshold) selected.push_back(i);
    }
    return selected;
}

Scalar default_hard_threshold(const Mlp& cost_model, const TrajectoryDataset& unlabeled,
                              Scalar gamma, Scalar quantile, int num_states, int num_actions) {
    if (unlabeled.size() == 0) throw ContractError("default_hard_threshold: empty dataset");
    const Matrix table = cost_table_from_model(cost_model, num_states, num_actions);
    std::vector<Scalar> sums;
    sums.reserve(static_cast<std::size_t>(unlabeled.size()));
    for (const Trajectory& t : unlabeled.trajectories) {
        Scalar cost = 0.0, weight = 1.0;
        for (const auto& [s, a] : t.steps) {
            cost += weight * table(s, a);
            weight *= gamma;
        }
        sums.push_back(cost);
    }
    std::sort(sums.begin(), sums.end());
    auto idx = static_cast<std::ptrdiff_t>(std::ceil(quantile * static_cast<Scalar>(sums.size()))) - 1;
    idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(sums.size()) - 1);
    return sums[static_cast<std::size_t>(idx)];
}

TrainedPolicy train_bc(const BcData& data, int num_states, int num_actions,
                       const PolicyLearnConfig& config) {
    config.validate();
    if (data.size() == 0) throw ContractError("train_bc: empty dataset");
    const std::vector<int> support = weight_support(data);

    Mlp model(make_policy_layers(num_states, num_actions, config.hidden),
              OutputHead::SoftmaxVector, mix_seed(config.seed, kPolicyInitStream));
    AdamW optimizer(model.param_count(),
                    {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
    Rng batch_rng(mix_seed(config.seed, kPolicyBatchStream));
    Vector grad = Vector::Zero(model.param_count());

    TrainedPolicy out{std::move(model), {}, {}, 0.0};
    std::vector<int> batch(static_cast<std::size_t>(config.batch_size));
    for (int step = 1; step <= config.steps; ++step) {
        for (int b = 0; b < config.batch_size; ++b)
            batch[static_cast<std::size_t>(b)] =
                support[static_cast<std::size_t>(batch_rng.uniform_int(
                    static_cast<int>(support.size())))];
        const Scalar loss =
            bc_step(out.model, optimizer, data, support, {}, batch, num_states, grad);
        out.final_objective = loss;
        if (step % config.log_interval == 0 || step == config.steps)
            out.curve.emplace_back(step, loss);
    }
    out.policy = policy_from_mlp(out.model, num_states);
    return out;
}

TrainedPolicy train_safemil_policy(const TrajectoryDataset& unlabeled, const Mlp& cost_model,
                                   int num_states, int num_actions,
                                   const PolicyLearnConfig& config) {
    config.validate();
    switch (config.method) {
        case PolicyMethod::SafemilTrajectory: {
            std::vector<Scalar> weights;
            weights.reserve(unlabeled.trajectories.size());
            for (const Trajectory& t : unlabeled.trajectories)
                weights.push_back(trajectory_weight(cost_model, t, config.gamma, config.beta,
                                                    num_states, num_actions));
            return train_bc(flatten_dataset(unlabeled, weights), num_states, num_actions,
                            config);
        }
        case PolicyMethod::SafemilTransition: {
            const Matrix table = cost_table_from_model(cost_model, num_states, num_actions);
            BcData data;
            for (const Trajectory& t : unlabeled.trajectories)
                for (const auto& [s, a] : t.steps) data.push(s, a, 1.0 - table(s, a));
            return train_bc(data, num_states, num_actions, config);
        }
        case PolicyMethod::SafemilThreshold: {
            const Scalar bhat =
                config.hard_threshold >= 0.0
                    ? config.hard_threshold
                    : default_hard_threshold(cost_model, unlabeled, config.gamma,
                                             config.threshold_quantile, num_states,
                                             num_actions);
            const std::vector<int> selected = select_preferred(
                cost_model, unlabeled, config.gamma, bhat, num_states, num_actions);
            if (selected.empty()) {
                if (!config.threshold_fallback)
                    throw TrainingError(
                        "safemil-threshold: hard threshold selected no trajectories; "
                        "raise b-hat or enable the weighted fallback explicitly");
                PolicyLearnConfig fallback = config;
                fallback.method = PolicyMethod::SafemilTrajectory;
                return train_safemil_policy(unlabeled, cost_model, num_states, num_actions,
                                            fallback);
            }
            std::vector<Scalar> weights(unlabeled.trajectories.size(), 0.0);
            for (int i : selected) weights[static_cast<std::size_t>(i)] = 1.0;
            return train_bc(flatten_dataset(unlabeled, weights), num_states, num_actions,
                            config);
        }
        default:
            throw ContractError("train_safemil_policy: non-SafeMIL method requested");
    }
}

TrainedPolicy train_bc_unlabeled(const TrajectoryDataset& unlabeled, int num_states,
                                 int num_actions, const PolicyLearnConfig& config) {
    return train_bc(flatten_dataset(unlabeled), num_states, num_actions, config);
}

TrexResult train_trex_wbc(const TrajectoryDataset& negative, const TrajectoryDataset& unlabeled,
                          int num_states, int num_actions, const PolicyLearnConfig& config) {
    config.validate();
    if (negative.size() == 0 || unlabeled.size() == 0)
        throw ContractError("train_trex_wbc: datasets must be non-empty");

    std::vector<int> layers;
    layers.push_back(num_states + num_actions);
    for (int h : config.hidden) layers.push_back(h);
    layers.push_back(1);
    Mlp reward(layers, OutputHead::LinearScalar, mix_seed(config.seed, kRewardInitStream));
    AdamW optimizer(reward.param_count(), {config.effective_aux_learning_rate(), 0.9, 0.999,
                                           1e-8, config.weight_decay});
    Rng pair_rng(mix_seed(config.seed, kRewardBatchStream));

    const Matrix inputs = all_state_action_inputs(num_states, num_actions);
    Vector grad = Vector::Zero(reward.param_count());

    // Pairwise segment ranking: unlabeled segments beat non-preferred ones.
    for (int step = 1; step <= config.aux_steps; ++step) {
        Matrix coeff_u = Matrix::Zero(num_states * num_actions, config.batch_size);
        Matrix coeff_n = Matrix::Zero(num_states * num_actions, config.batch_size);
        for (int b = 0; b < config.batch_size; ++b) {
            const Bag seg_u = sample_bag(unlabeled, 1, config.segment_len, pair_rng);
            const Bag seg_n = sample_bag(negative, 1, config.segment_len, pair_rng);
            for (const auto& [s, a] : seg_u.segments.front())
                coeff_u(s * num_actions + a, b) += 1.0;
            for (const auto& [s, a] : seg_n.segments.front())
                coeff_n(s * num_actions + a, b) += 1.0;
        }

        Mlp::Cache cache;
        const Vector values = reward.forward_batch(inputs, cache).row(0).transpose();
        const Vector returns_u = coeff_u.transpose() * values;
        const Vector returns_n = coeff_n.transpose() * values;

        Scalar loss = 0.0;
        Vector grad_values = Vector::Zero(num_states * num_actions);
        for (int b = 0; b < config.batch_size; ++b) {
            loss += softplus(returns_n[b] - returns_u[b]);
            const Scalar s = sigmoid(returns_n[b] - returns_u[b]);
            grad_values += s * coeff_n.col(b) - s * coeff_u.col(b);
        }
        loss /= config.batch_size;
        grad_values /= static_cast<Scalar>(config.batch_size);
        if (!std::isfinite(loss))
            throw TrainingError("trex-wbc: non-finite pairwise loss at step " +
                                std::to_string(step));
        grad.setZero();
        reward.backward_batch(cache, grad_values.transpose(), grad);
        optimizer.step(reward.params(), grad);
    }

    // Per-transition BC weights: learned reward squashed to (0,1).
    const Vector values = reward.forward_batch(inputs).row(0).transpose();
    BcData data;
    for (const Trajectory& t : unlabeled.trajectories)
        for (const auto& [s, a] : t.steps)
            data.push(s, a, sigmoid(values[s * num_actions + a]));

    TrexResult result{train_bc(data, num_states, num_actions, config), std::move(reward)};
    return result;
}

DwbcResult train_dwbc_nu(const TrajectoryDataset& negative, const TrajectoryDataset& unlabeled,
                         int num_states, int num_actions, const PolicyLearnConfig& config) {
    config.validate();
    if (negative.size() == 0 || unlabeled.size() == 0)
        throw ContractError("train_dwbc_nu: datasets must be non-empty");

    const BcData data_u = flatten_dataset(unlabeled);
    const BcData data_n = flatten_dataset(negative);
    const std::vector<int> support = weight_support(data_u);

    Mlp policy_net(make_policy_layers(num_states, num_actions, config.hidden),
                   OutputHead::SoftmaxVector, mix_seed(config.seed, kPolicyInitStream));
    std::vector<int> disc_layers;
    disc_layers.push_back(num_states + num_actions + 1);  // extra input: log pi(a|s)
    for (int h : config.hidden) disc_layers.push_back(h);
    disc_layers.push_back(1);
    Mlp disc(disc_layers, OutputHead::SigmoidScalar, mix_seed(config.seed, kDiscInitStream));

    AdamW policy_opt(policy_net.param_count(),
                     {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
    AdamW disc_opt(disc.param_count(), {config.effective_aux_learning_rate(), 0.9, 0.999, 1e-8,
                                        config.weight_decay});
    Rng policy_rng(mix_seed(config.seed, kPolicyBatchStream));
    Rng disc_rng(mix_seed(config.seed, kDiscBatchStream));

    Vector policy_grad = Vector::Zero(policy_net.param_count());
    Vector disc_grad = Vector::Zero(disc.param_count());
    const int batch = config.batch_size;
    const Scalar eta = config.eta;

    TrainedPolicy trained{std::move(policy_net), {}, {}, 0.0};

    // builds discriminator inputs for transition indices of `data`, with the
    // current policy's log pi(a|s) feature (frozen)
    auto disc_inputs_for = [&](const BcData& data, const std::vector<int>& idx) {
        Matrix states = Matrix::Zero(num_states, static_cast<Eigen::Index>(idx.size()));
        for (std::size_t b = 0; b < idx.size(); ++b)
            states(data.states[static_cast<std::size_t>(idx[b])], static_cast<Eigen::Index>(b)) =
                1.0;
        Mlp::Cache cache;
        const Matrix log_probs = trained.model.log_softmax_batch(states, cache);
        Matrix inputs = Matrix::Zero(num_states + num_actions + 1,
                                     static_cast<Eigen::Index>(idx.size()));
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const int i = idx[b];
            const int s = data.states[static_cast<std::size_t>(i)];
            const int a = data.actions[static_cast<std::size_t>(i)];
            inputs(s, static_cast<Eigen::Index>(b)) = 1.0;
            inputs(num_states + a, static_cast<Eigen::Index>(b)) = 1.0;
            inputs(num_states + num_actions, static_cast<Eigen::Index>(b)) =
                log_probs(a, static_cast<Eigen::Index>(b));
        }
        return inputs;
    };

    std::vector<int> batch_idx(static_cast<std::size_t>(batch));
    for (int step = 1; step <= config.steps; ++step) {
        // --- discriminator update (negative-unlabeled objective) ---
        std::vector<int> idx_n(static_cast<std::size_t>(batch)), idx_u(static_cast<std::size_t>(batch));
        for (int b = 0; b < batch; ++b) {
            idx_n[static_cast<std::size_t>(b)] = disc_rng.uniform_int(data_n.size());
            idx_u[static_cast<std::size_t>(b)] = disc_rng.uniform_int(data_u.size());
        }
        const Matrix in_n = disc_inputs_for(data_n, idx_n);
        const Matrix in_u = disc_inputs_for(data_u, idx_u);
        Matrix joined(in_n.rows(), 2 * batch);
        joined << in_n, in_u;

        Mlp::Cache disc_cache;
        const Matrix d_out = disc.forward_batch(joined, disc_cache);
        Scalar disc_loss = 0.0;
        Matrix d_grad_out = Matrix::Zero(1, 2 * batch);
        for (int b = 0; b < 2 * batch; ++b) {
            const bool from_negative = b < batch;
            const Scalar d = d_out(0, b);
            const Scalar dc = std::clamp(d, kDiscClampLo, kDiscClampHi);
            const bool clamped = (d < kDiscClampLo) || (d > kDiscClampHi);
            if (from_negative) {
                disc_loss += (eta * -std::log(dc) - eta * -std::log(1.0 - dc)) / batch;
                if (!clamped)
                    d_grad_out(0, b) = (eta * (-1.0 / dc) - eta * (1.0 / (1.0 - dc))) / batch;
            } else {
                disc_loss += -std::log(1.0 - dc) / batch;
                if (!clamped) d_grad_out(0, b) = (1.0 / (1.0 - dc)) / batch;
            }
        }
        if (!std::isfinite(disc_loss))
            throw TrainingError("dwbc-nu: non-finite discriminator loss at step " +
                                std::to_string(step));
        disc_grad.setZero();
        disc.backward_batch(disc_cache, d_grad_out, disc_grad);
        disc_opt.step(disc.params(), disc_grad);

        // --- policy update with weights (1 - d), d frozen ---
        for (int b = 0; b < batch; ++b)
            batch_idx[static_cast<std::size_t>(b)] =
                support[static_cast<std::size_t>(policy_rng.uniform_int(
                    static_cast<int>(support.size())))];
        const Matrix in_p = disc_inputs_for(data_u, batch_idx);
        const Matrix d_policy = disc.forward_batch(in_p);
        std::vector<Scalar> weights(static_cast<std::size_t>(batch));
        for (int b = 0; b < batch; ++b)
            weights[static_cast<std::size_t>(b)] = 1.0 - d_policy(0, b);

        const Scalar loss = bc_step(trained.model, policy_opt, data_u, support, weights,
                                    batch_idx, num_states, policy_grad);
        trained.final_objective = loss;
        if (step % config.log_interval == 0 || step == config.steps)
            trained.curve.emplace_back(step, loss);
    }

    trained.policy = policy_from_mlp(trained.model, num_states);
    return {std::move(trained), std::move(disc)};
}

Policy policy_from_mlp(const Mlp& model, int num_states) {
    if (model.head() != OutputHead::SoftmaxVector)
        throw ContractError("policy_from_mlp: model must have a softmax head");
    if (model.input_dim() != num_states)
        throw ContractError("policy_from_mlp: input dimension mismatch");
    const Matrix out = model.forward_batch(Matrix::Identity(num_states, num_states));
    Matrix table = out.transpose();
    // guard against rounding: renormalize rows exactly
    for (int s = 0; s < table.rows(); ++s) table.row(s) /= table.row(s).sum();
    return Policy::stationary(std::move(table), PolicyKind::MlpSoftmax);
}

}  // namespace safemil
