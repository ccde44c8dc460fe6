#pragma once

#include "safemil/cmdp.hpp"
#include "safemil/common.hpp"
#include "safemil/dataset.hpp"
#include "safemil/mlp.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace safemil {

enum class PolicyMethod {
    SafemilTrajectory,
    SafemilTransition,
    SafemilThreshold,
    BcUnlabeled,
    TrexWbc,
    DwbcNu,
};

std::string method_name(PolicyMethod method);
PolicyMethod method_from_name(const std::string& name);
bool method_needs_cost_model(PolicyMethod method);

struct PolicyLearnConfig {
    PolicyMethod method = PolicyMethod::BcUnlabeled;
    std::vector<int> hidden = {64, 64};
    Scalar gamma = 0.99;
    Scalar beta = 0.5;            // trajectory-weight temperature (Eq.-13 style)
    Scalar eta = 0.5;             // negative-unlabeled mixing weight (DWBC-NU)
    Scalar hard_threshold = -1.0; // b-hat; negative selects the alpha-quantile rule
    Scalar threshold_quantile = 0.5;  // quantile used by the automatic b-hat rule
    bool threshold_fallback = false;  // empty hard selection: fall back to weights?
    int steps = 5000;
    int batch_size = 128;
    Scalar learning_rate = 1e-3;
    Scalar weight_decay = 0.01;
    std::uint64_t seed = 0;
    int log_interval = 200;
    int segment_len = 5;   // pairwise reward-model segment length (T-REX)
    int aux_steps = 3000;  // reward-model training steps (T-REX)
    Scalar aux_learning_rate = -1.0;  // discriminator / reward model; <0 = learning_rate

    void validate() const;
    Scalar effective_aux_learning_rate() const {
        return aux_learning_rate < 0.0 ? learning_rate : aux_learning_rate;
    }
};

/// Flattened weighted behavior-cloning view: one entry per transition.
struct BcData {
    std::vector<int> states;
    std::vector<int> actions;
    std::vector<Scalar> weights;

    int size() const { return static_cast<int>(states.size()); }
    void push(int s, int a, Scalar w);
};

/// Expands a dataset into transitions; per-trajectory weights are repeated
/// across each trajectory's steps. Empty weights mean uniform 1.
BcData flatten_dataset(const TrajectoryDataset& dataset,
                       const std::vector<Scalar>& per_trajectory_weights = {});

struct TrainedPolicy {
    Mlp model;
    Policy policy;  // materialized softmax-over-states table
    std::vector<std::pair<long, Scalar>> curve;
    Scalar final_objective = 0.0;
};

/// exp(-(discounted cost-model sum over the full trajectory) / beta), in (0,1].
Scalar trajectory_weight(const Mlp& cost_model, const Trajectory& trajectory, Scalar gamma,
                         Scalar beta, int num_states, int num_actions);

/// Indices of trajectories whose discounted cost-model sum is <= threshold.
std::vector<int> select_preferred(const Mlp& cost_model, const TrajectoryDataset& unlabeled,
                                  Scalar gamma, Scalar threshold, int num_states,
                                  int num_actions);

/// Automatic b-hat: the given quantile of discounted cost-model sums over the
/// unlabeled set (callers pass the dataset's preferred fraction when known).
Scalar default_hard_threshold(const Mlp& cost_model, const TrajectoryDataset& unlabeled,
                              Scalar gamma, Scalar quantile, int num_states, int num_actions);

/// Mini-batch weighted negative log-likelihood behavior cloning. Batches are
/// drawn uniformly from the positive-weight support, so {0,1}-weighted
/// training replays exactly the same updates as training on the support
/// subset under the same seed. Weights must be non-negative, not all zero.
TrainedPolicy train_bc(const BcData& data, int num_states, int num_actions,
                       const PolicyLearnConfig& config);

/// Dispatches on config.method to trajectory weighting, transition weighting
/// (1 - c(s,a)), or the hard-threshold subset.
TrainedPolicy train_safemil_policy(const TrajectoryDataset& unlabeled, const Mlp& cost_model,
                                   int num_states, int num_actions,
                                   const PolicyLearnConfig& config);

TrainedPolicy train_bc_unlabeled(const TrajectoryDataset& unlabeled, int num_states,
                                 int num_actions, const PolicyLearnConfig& config);

/// Pairwise reward model (unlabeled segments preferred over non-preferred
/// ones), then weighted BC with per-transition weight sigmoid(reward).
/// Returns the policy plus the trained reward model.
struct TrexResult {
    TrainedPolicy policy;
    Mlp reward_model;
};
TrexResult train_trex_wbc(const TrajectoryDataset& negative, const TrajectoryDataset& unlabeled,
                          int num_states, int num_actions, const PolicyLearnConfig& config);

/// Negative-unlabeled discriminator d(s, a, log pi(a|s)) alternating with
/// weighted BC under weights (1 - d); one discriminator step per policy step.
/// d is clamped to [0.05, 0.95] inside the NU loss to keep it bounded.
struct DwbcResult {
    TrainedPolicy policy;
    Mlp discriminator;
};
DwbcResult train_dwbc_nu(const TrajectoryDataset& negative, const TrajectoryDataset& unlabeled,
                         int num_states, int num_actions, const PolicyLearnConfig& config);

/// Softmax policy table over every state (rows sum to 1).
Policy policy_from_mlp(const Mlp& model, int num_states);

}  // namespace safemil
