#include "safemil/mil.hpp"

#include <cmath>
#include <string>

namespace safemil {

namespace {

Scalar softplus(Scalar x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

Scalar sigmoid(Scalar x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const Scalar e = std::exp(x);
    return e / (1.0 + e);
}

Matrix all_state_action_inputs(int num_states, int num_actions) {
    Matrix inputs = Matrix::Zero(num_states + num_actions, num_states * num_actions);
    for (int s = 0; s < num_states; ++s)
        for (int a = 0; a < num_actions; ++a) {
            const int col = s * num_actions + a;
            inputs(s, col) = 1.0;
            inputs(num_states + a, col) = 1.0;
        }
    return inputs;
}

void check_cost_model(const Mlp& model, int num_states, int num_actions) {
    if (model.head() != OutputHead::SigmoidScalar)
        throw ContractError("bag_score: cost model must have a sigmoid-scalar head");
    if (model.input_dim() != num_states + num_actions)
        throw ContractError("bag_score: model input dimension does not match the environment");
}

/// gamma^t coefficients of each segment step, flattened onto (s*A + a) bins
/// and divided by K. A bag score is then coeffs . c over distinct pairs.
///
/// Occurrences are tallied as integers per (bin, t) and combined in a fixed
/// bin-major order, so the result is bit-identical under any permutation of
/// the segments (scores must be exactly permutation-invariant).
Vector bag_coefficients(const Bag& bag, Scalar gamma, int num_states, int num_actions) {
    if (bag.size() == 0) throw ContractError("bag_score: empty bag");
    const int bins = num_states * num_actions;
    int max_len = 0;
    for (const auto& segment : bag.segments)
        max_len = std::max(max_len, static_cast<int>(segment.size()));
    if (max_len == 0) throw ContractError("bag_score: bag contains only empty segments");

    std::vector<long> counts(static_cast<std::size_t>(bins) * max_len, 0);
    for (const auto& segment : bag.segments) {
        int t = 0;
        for (const auto& [s, a] : segment) {
            if (s < 0 || s >= num_states || a < 0 || a >= num_actions)
                throw ContractError("bag_score: state or action id out of range");
            ++counts[static_cast<std::size_t>(s * num_actions + a) * max_len + t];
            ++t;
        }
    }

    Vector powers(max_len);
    powers[0] = 1.0;
    for (int t = 1; t < max_len; ++t) powers[t] = powers[t - 1] * gamma;

    Vector coeffs = Vector::Zero(bins);
    const Scalar inv_k = 1.0 / static_cast<Scalar>(bag.size());
    for (int bin = 0; bin < bins; ++bin) {
        Scalar acc = 0.0;
        for (int t = 0; t < max_len; ++t) {
            const long c = counts[static_cast<std::size_t>(bin) * max_len + t];
            if (c != 0) acc += static_cast<Scalar>(c) * powers[t];
        }
        coeffs[bin] = acc * inv_k;
    }
    return coeffs;
}

}  // namespace

void CostModelConfig::validate() const {
    if (bag_size < 1) throw ConfigError("cost config: bag size K must be >= 1");
    if (segment_len < 1) throw ConfigError("cost config: segment length H must be >= 1");
    if (batch_size < 1) throw ConfigError("cost config: batch size must be >= 1");
    if (steps < 1) throw ConfigError("cost config: steps must be >= 1");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("cost config: gamma must lie in (0,1)");
    if (learning_rate <= 0.0) throw ConfigError("cost config: learning rate must be positive");
}

Bag sample_bag(const TrajectoryDataset& dataset, int bag_size, int segment_len, Rng& rng) {
    if (dataset.size() == 0) throw ContractError("sample_bag: empty dataset");
    if (bag_size < 1 || segment_len < 1)
        throw ContractError("sample_bag: K and H must be positive");

    Bag bag;
    bag.label =
        dataset.role == DatasetRole::NonPreferred ? BagLabel::Negative : BagLabel::Unlabeled;
    bag.segments.reserve(static_cast<std::size_t>(bag_size));
    bag.source_indices.reserve(static_cast<std::size_t>(bag_size));
    for (int k = 0; k < bag_size; ++k) {
        const int traj_idx = rng.uniform_int(dataset.size());
        const Trajectory& traj = dataset.trajectories[static_cast<std::size_t>(traj_idx)];
        const int len = traj.length();
        std::vector<std::pair<int, int>> segment;
        if (len <= segment_len) {
            segment = traj.steps;
        } else {
            const int start = rng.uniform_int(len - segment_len + 1);
            segment.assign(traj.steps.begin() + start, traj.steps.begin() + start + segment_len);
        }
        bag.segments.push_back(std::move(segment));
        bag.source_indices.push_back(traj_idx);
    }
    return bag;
}

Scalar lemma1_probability(Scalar alpha, int bag_size) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ContractError("lemma1_probability: alpha must lie in [0,1]");
    if (bag_size < 1) throw ContractError("lemma1_probability: K must be >= 1");
    return 1.0 - std::pow(1.0 - alpha, static_cast<Scalar>(bag_size));
}

Scalar bag_score(const Mlp& model, const Bag& bag, Scalar gamma, int num_states,
                 int num_actions) {
    check_cost_model(model, num_states, num_actions);
    const Vector coeffs = bag_coefficients(bag, gamma, num_states, num_actions);
    const Matrix costs = model.forward_batch(all_state_action_inputs(num_states, num_actions));
    return coeffs.dot(costs.row(0).transpose());
}

void bag_score_backward(const Mlp& model, const Bag& bag, Scalar gamma, int num_states,
                        int num_actions, Scalar upstream, Vector& grad) {
    check_cost_model(model, num_states, num_actions);
    const Vector coeffs = bag_coefficients(bag, gamma, num_states, num_actions);
    const Matrix inputs = all_state_action_inputs(num_states, num_actions);
    Mlp::Cache cache;
    model.forward_batch(inputs, cache);
    const Matrix grad_out = upstream * coeffs.transpose();
    model.backward_batch(cache, grad_out, grad);
}

Scalar bag_score_table(const MatrixRef& cost_table, const Bag& bag, Scalar gamma) {
    const int num_states = static_cast<int>(cost_table.rows());
    const int num_actions = static_cast<int>(cost_table.cols());
    const Vector coeffs = bag_coefficients(bag, gamma, num_states, num_actions);
    Scalar total = 0.0;
    for (int s = 0; s < num_states; ++s)
        for (int a = 0; a < num_actions; ++a)
            total += coeffs[s * num_actions + a] * cost_table(s, a);
    return total;
}

Scalar bt_loss(Scalar score_negative, Scalar score_unlabeled) {
    return softplus(score_unlabeled - score_negative);
}

std::pair<Scalar, Scalar> bt_loss_grad(Scalar score_negative, Scalar score_unlabeled) {
    const Scalar s = sigmoid(score_unlabeled - score_negative);
    return {-s, s};
}

Matrix cost_table_from_model(const Mlp& model, int num_states, int num_actions) {
    check_cost_model(model, num_states, num_actions);
    const Matrix out = model.forward_batch(all_state_action_inputs(num_states, num_actions));
    Matrix table(num_states, num_actions);
    for (int s = 0; s < num_states; ++s)
        for (int a = 0; a < num_actions; ++a) table(s, a) = out(0, s * num_actions + a);
    return table;
}

TrainedCostModel train_cost_model(const TrajectoryDataset& negative,
                                  const TrajectoryDataset& unlabeled, int num_states,
                                  int num_actions, const CostModelConfig& config) {
    config.validate();
    if (negative.size() == 0 || unlabeled.size() == 0)
        throw ContractError("train_cost_model: datasets must be non-empty");
    if (negative.role != DatasetRole::NonPreferred)
        throw ContractError("train_cost_model: first dataset must be the non-preferred one");

    std::vector<int> layers;
    layers.push_back(num_states + num_actions);
    if (config.input_projection > 0) layers.push_back(config.input_projection);
    for (int h : config.hidden) layers.push_back(h);
    layers.push_back(1);

    Mlp model(layers, OutputHead::SigmoidScalar, mix_seed(config.seed, 0),
              config.input_projection > 0);
    AdamW optimizer(model.param_count(),
                    {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
    Rng bag_rng(mix_seed(config.seed, 1));
    Rng holdout_rng(mix_seed(config.seed, 2));

    const Matrix inputs = all_state_action_inputs(num_states, num_actions);
    Vector grad = Vector::Zero(model.param_count());

    TrainedCostModel out{std::move(model), {}, {}};
    out.step_losses.reserve(static_cast<std::size_t>(config.steps));

    for (int step = 1; step <= config.steps; ++step) {
        // gamma-weighted (s,a) coefficients for each bag in the batch
        Matrix neg_coeffs(num_states * num_actions, config.batch_size);
        Matrix unl_coeffs(num_states * num_actions, config.batch_size);
        for (int b = 0; b < config.batch_size; ++b) {
            const Bag bn = sample_bag(negative, config.bag_size, config.segment_len, bag_rng);
            const Bag bu = sample_bag(unlabeled, config.bag_size, config.segment_len, bag_rng);
            neg_coeffs.col(b) = bag_coefficients(bn, config.gamma, num_states, num_actions);
            unl_coeffs.col(b) = bag_coefficients(bu, config.gamma, num_states, num_actions);
        }

        Mlp::Cache cache;
        const Matrix costs = out.model.forward_batch(inputs, cache);  // 1 x (S*A)
        const Vector cost_values = costs.row(0).transpose();
        const Vector scores_n = neg_coeffs.transpose() * cost_values;
        const Vector scores_u = unl_coeffs.transpose() * cost_values;

        Scalar loss = 0.0;
        Vector grad_costs = Vector::Zero(num_states * num_actions);
        for (int b = 0; b < config.batch_size; ++b) {
            loss += bt_loss(scores_n[b], scores_u[b]);
            const auto [gn, gu] = bt_loss_grad(scores_n[b], scores_u[b]);
            grad_costs += gn * neg_coeffs.col(b) + gu * unl_coeffs.col(b);
        }
        loss /= config.batch_size;
        grad_costs /= static_cast<Scalar>(config.batch_size);

        if (!std::isfinite(loss))
            throw TrainingError("train_cost_model: non-finite loss at step " +
                                std::to_string(step));

        grad.setZero();
        out.model.backward_batch(cache, grad_costs.transpose(), grad);
        optimizer.step(out.model.params(), grad);
        out.step_losses.push_back(loss);

        if (step % config.log_interval == 0 || step == config.steps) {
            const Scalar acc =
                bag_pair_accuracy(out.model, negative, unlabeled, num_states, num_actions,
                                  config, config.holdout_pairs, holdout_rng);
            out.curve.push_back({step, loss, acc});
        }
    }
    return out;
}

Scalar bag_pair_accuracy(const Mlp& model, const TrajectoryDataset& negative,
                         const TrajectoryDataset& unlabeled, int num_states, int num_actions,
                         const CostModelConfig& config, int pairs, Rng& rng) {
    if (pairs < 1) throw ContractError("bag_pair_accuracy: need at least one pair");
    const Matrix table = cost_table_from_model(model, num_states, num_actions);
    int ordered = 0;
    for (int i = 0; i < pairs; ++i) {
        const Bag bn = sample_bag(negative, config.bag_size, config.segment_len, rng);
        const Bag bu = sample_bag(unlabeled, config.bag_size, config.segment_len, rng);
        if (bag_score_table(table, bn, config.gamma) > bag_score_table(table, bu, config.gamma))
            ++ordered;
    }
    return static_cast<Scalar>(ordered) / static_cast<Scalar>(pairs);
}

}  // namespace safemil
