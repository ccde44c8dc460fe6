#pragma once

#include "safemil/common.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace safemil {

enum class OutputHead { SigmoidScalar, SoftmaxVector, LinearScalar };

std::string head_name(OutputHead head);
OutputHead head_from_name(const std::string& name);

/// Dense feed-forward network with tanh hidden units and a flat parameter
/// vector. Gradients are exact reverse-mode, accumulated into a caller-owned
/// buffer so composite losses can sum contributions from many forwards.
///
/// Parameter layout per layer: W (fan_out x fan_in, column-major), then b.
/// Total count is sum over layers of (fan_in + 1) * fan_out.
class Mlp {
  public:
    /// layer_sizes = [input, hidden..., output]. With linear_input_projection
    /// the first hidden layer applies no activation (identity).
    Mlp(std::vector<int> layer_sizes, OutputHead head, std::uint64_t seed,
        bool linear_input_projection = false);

    /// Per-layer activations of one batched forward; column j belongs to input j.
    struct Cache {
        std::vector<Matrix> activations;  // activations[0] = inputs, back() = head output
        Matrix logits;                    // pre-head output of the last layer
    };

    /// Head output for a single input (size output_dim; scalar heads give size 1).
    Vector forward(const VectorRef& input) const;

    /// Columns of `inputs` are examples; returns head outputs columnwise.
    Matrix forward_batch(const MatrixRef& inputs) const;
    Matrix forward_batch(const MatrixRef& inputs, Cache& cache) const;

    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(head output)
    /// columnwise. `grad` must have param_count() entries.
    void backward_batch(const Cache& cache, const MatrixRef& grad_output, Vector& grad) const;

    /// Same, but the upstream gradient is w.r.t. the pre-head logits. Preferred
    /// for softmax NLL where the combined gradient is softmax(z) - onehot.
    void backward_logits_batch(const Cache& cache, const MatrixRef& grad_logits,
                               Vector& grad) const;

    /// Column-wise log-softmax of the logits for a batch of inputs.
    Matrix log_softmax_batch(const MatrixRef& inputs, Cache& cache) const;

    int input_dim() const { return layer_sizes_.front(); }
    int output_dim() const { return layer_sizes_.back(); }
    Eigen::Index param_count() const { return params_.size(); }
    const std::vector<int>& layer_sizes() const { return layer_sizes_; }
    OutputHead head() const { return head_; }
    std::uint64_t seed() const { return seed_; }
    bool linear_input_projection() const { return linear_input_projection_; }

    const Vector& params() const { return params_; }
    Vector& params() { return params_; }
    void set_params(const VectorRef& params);
    void zero_params() { params_.setZero(); }

  private:
    std::vector<int> layer_sizes_;
    OutputHead head_;
    std::uint64_t seed_;
    bool linear_input_projection_;
    Vector params_;

    int layer_count() const { return static_cast<int>(layer_sizes_.size()) - 1; }
    bool layer_has_tanh(int layer) const;
    Eigen::Map<const Matrix> weight(int layer) const;
    Eigen::Map<const Vector> bias(int layer) const;
    Eigen::Index layer_offset(int layer) const;
};

/// Adaptive-moment optimizer with bias correction and decoupled weight decay
/// (decay applied to the parameters after the moment update).
class AdamW {
  public:
    struct Config {
        Scalar learning_rate = 1e-3;
        Scalar beta1 = 0.9;
        Scalar beta2 = 0.999;
        Scalar epsilon = 1e-8;
        Scalar weight_decay = 0.0;
    };

    AdamW(Eigen::Index param_count, Config config);

    /// One update in place. Throws TrainingError if the gradient has NaN/inf.
    void step(Vector& params, const VectorRef& grad);

    long step_count() const { return step_count_; }
    const Config& config() const { return config_; }

  private:
    Config config_;
    long step_count_ = 0;
    Vector first_moment_;
    Vector second_moment_;
};

/// Evaluates a scalar loss and accumulates its parameter gradient; returns the loss.
using LossGradFn = std::function<Scalar(const Mlp&, Vector& grad)>;

struct GradCheckReport {
    Scalar max_rel_error = 0.0;
    Eigen::Index worst_index = -1;
    Scalar analytic_at_worst = 0.0;
    Scalar numeric_at_worst = 0.0;
    int probed = 0;
};

/// Compares the analytic gradient of `loss` against central finite differences
/// on `probes` randomly chosen coordinates (all coordinates when probes <= 0).
GradCheckReport grad_check(const Mlp& model, const LossGradFn& loss, int probes,
                           Scalar fd_step, std::uint64_t seed);

/// One-hot encoders shared by the cost / policy / discriminator inputs.
Vector one_hot(int index, int size);
Vector encode_state(int state, int num_states);
Vector encode_state_action(int state, int action, int num_states, int num_actions);

/// Binary checkpoint: single-line JSON header, newline, little-endian doubles.
void save_checkpoint(const Mlp& model, const std::string& path, long step_count = 0);
Mlp load_checkpoint(const std::string& path, long* step_count = nullptr);

}  // namespace safemil
