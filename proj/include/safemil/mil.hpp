#pragma once

#include "safemil/common.hpp"
#include "safemil/dataset.hpp"
#include "safemil/mlp.hpp"
#include "safemil/rng.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace safemil {

enum class BagLabel { Negative, Unlabeled };

/// Fixed-size multiset of trajectory segments. Segments are semantically
/// unordered: every score below is invariant to their permutation.
/// source_indices records which dataset trajectory each segment came from,
/// so evaluation code can consult hidden provenance; training never reads it.
struct Bag {
    std::vector<std::vector<std::pair<int, int>>> segments;
    BagLabel label = BagLabel::Unlabeled;
    std::vector<int> source_indices;

    int size() const { return static_cast<int>(segments.size()); }
};

/// Draws K segments: trajectory uniform with replacement, start index uniform
/// over valid positions, H consecutive steps (whole trajectory when shorter).
Bag sample_bag(const TrajectoryDataset& dataset, int bag_size, int segment_len, Rng& rng);

/// Closed-form probability that a size-K with-replacement draw from a pool
/// with preferred fraction alpha contains at least one preferred element:
/// 1 - (1 - alpha)^K.
Scalar lemma1_probability(Scalar alpha, int bag_size);

/// (1/K) * sum over segments of sum_t gamma^t c(s_t, a_t), the discount
/// restarting at each segment's first step. `model` must be a sigmoid-scalar
/// cost network over one-hot (state, action) input.
Scalar bag_score(const Mlp& model, const Bag& bag, Scalar gamma, int num_states,
                 int num_actions);

/// Accumulates upstream * d(bag_score)/d(theta) into grad.
void bag_score_backward(const Mlp& model, const Bag& bag, Scalar gamma, int num_states,
                        int num_actions, Scalar upstream, Vector& grad);

/// Same score with a fixed S x A cost table instead of a model (used by the
/// ground-truth ordering checks).
Scalar bag_score_table(const MatrixRef& cost_table, const Bag& bag, Scalar gamma);

/// Bradley-Terry loss -log(exp(s_n) / (exp(s_n) + exp(s_u))), evaluated
/// stably as softplus(s_u - s_n). Minimizing drives s_n above s_u.
Scalar bt_loss(Scalar score_negative, Scalar score_unlabeled);

/// d(bt_loss)/d(score_negative), d(bt_loss)/d(score_unlabeled).
std::pair<Scalar, Scalar> bt_loss_grad(Scalar score_negative, Scalar score_unlabeled);

struct CostModelConfig {
    Scalar gamma = 0.99;
    int bag_size = 64;    // K
    int segment_len = 5;  // H
    int batch_size = 32;  // bag pairs per optimizer step
    int steps = 4000;
    Scalar learning_rate = 1e-3;
    Scalar weight_decay = 0.01;
    std::uint64_t seed = 13;
    std::vector<int> hidden = {64, 64};
    int input_projection = 0;  // >0 inserts a linear projection layer of this width
    int log_interval = 100;
    int holdout_pairs = 200;  // freshly sampled pairs scored at each log point

    void validate() const;
};

struct CostCurvePoint {
    long step = 0;
    Scalar loss = 0.0;
    Scalar holdout_pair_accuracy = 0.0;
};

struct TrainedCostModel {
    Mlp model;
    std::vector<Scalar> step_losses;       // batch-mean loss at every step
    std::vector<CostCurvePoint> curve;     // log_interval points for the CSV
};

/// Algorithm core: per step, sample a batch of (negative, unlabeled) bag
/// pairs, take one AdamW step on the mean Bradley-Terry loss. Deterministic
/// under the config seed. Internally evaluates the network once per distinct
/// (s,a) pair and combines with gamma-weighted counts, which equals the
/// per-step evaluation up to summation order.
TrainedCostModel train_cost_model(const TrajectoryDataset& negative,
                                  const TrajectoryDataset& unlabeled, int num_states,
                                  int num_actions, const CostModelConfig& config);

/// Fraction of freshly sampled (negative, unlabeled) bag pairs with
/// Score(B_n) > Score(B_u).
Scalar bag_pair_accuracy(const Mlp& model, const TrajectoryDataset& negative,
                         const TrajectoryDataset& unlabeled, int num_states, int num_actions,
                         const CostModelConfig& config, int pairs, Rng& rng);

/// Model outputs over all one-hot (s,a) inputs as an S x A table.
Matrix cost_table_from_model(const Mlp& model, int num_states, int num_actions);

}  // namespace safemil
