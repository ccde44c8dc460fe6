#include "safemil/mlp.hpp"

#include "safemil/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <utility>

namespace safemil {

namespace {

Scalar stable_sigmoid(Scalar z) {
    if (z >= 0.0) {
        const Scalar e = std::exp(-z);
        return 1.0 / (1.0 + e);
    }
    const Scalar e = std::exp(z);
    return e / (1.0 + e);
}

void softmax_inplace(Matrix& logits) {
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        Vector col = logits.col(j);
        const Scalar m = col.maxCoeff();
        col = (col.array() - m).exp();
        logits.col(j) = col / col.sum();
    }
}

}  // namespace

std::string head_name(OutputHead head) {
    switch (head) {
        case OutputHead::SigmoidScalar: return "sigmoid-scalar";
        case OutputHead::SoftmaxVector: return "softmax-vector";
        case OutputHead::LinearScalar: return "linear-scalar";
    }
    throw ContractError("head_name: unknown head");
}

OutputHead head_from_name(const std::string& name) {
    if (name == "sigmoid-scalar") return OutputHead::SigmoidScalar;
    if (name == "softmax-vector") return OutputHead::SoftmaxVector;
    if (name == "linear-scalar") return OutputHead::LinearScalar;
    throw ConfigError("unknown output head: " + name);
}

Mlp::Mlp(std::vector<int> layer_sizes, OutputHead head, std::uint64_t seed,
         bool linear_input_projection)
    : layer_sizes_(std::move(layer_sizes)),
      head_(head),
      seed_(seed),
      linear_input_projection_(linear_input_projection) {
    if (layer_sizes_.size() < 2) throw ConfigError("Mlp: need at least input and output sizes");
    for (int s : layer_sizes_)
        if (s <= 0) throw ConfigError("Mlp: layer sizes must be positive");
    if (head_ != OutputHead::SoftmaxVector && layer_sizes_.back() != 1)
        throw ConfigError("Mlp: scalar heads require output size 1");

    Eigen::Index count = 0;
    for (int l = 0; l < layer_count(); ++l)
        count += static_cast<Eigen::Index>(layer_sizes_[l] + 1) * layer_sizes_[l + 1];
    params_.resize(count);

    // Xavier-uniform weights, zero biases.
    Rng rng(seed);
    Eigen::Index offset = 0;
    for (int l = 0; l < layer_count(); ++l) {
        const int fan_in = layer_sizes_[l];
        const int fan_out = layer_sizes_[l + 1];
        const Scalar bound = std::sqrt(6.0 / static_cast<Scalar>(fan_in + fan_out));
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(fan_in) * fan_out; ++i)
            params_[offset + i] = rng.uniform(-bound, bound);
        offset += static_cast<Eigen::Index>(fan_in) * fan_out;
        params_.segment(offset, fan_out).setZero();
        offset += fan_out;
    }
}

bool Mlp::layer_has_tanh(int layer) const {
    if (layer == layer_count() - 1) return false;  // output layer is linear pre-head
    if (layer == 0 && linear_input_projection_) return false;
    return true;
}

Eigen::Index Mlp::layer_offset(int layer) const {
    Eigen::Index offset = 0;
    for (int l = 0; l < layer; ++l)
        offset += static_cast<Eigen::Index>(layer_sizes_[l] + 1) * layer_sizes_[l + 1];
    return offset;
}

Eigen::Map<const Matrix> Mlp::weight(int layer) const {
    return {params_.data() + layer_offset(layer), layer_sizes_[layer + 1], layer_sizes_[layer]};
}

Eigen::Map<const Vector> Mlp::bias(int layer) const {
    const Eigen::Index offset =
        layer_offset(layer) + static_cast<Eigen::Index>(layer_sizes_[layer]) * layer_sizes_[layer + 1];
    return {params_.data() + offset, layer_sizes_[layer + 1]};
}

void Mlp::set_params(const VectorRef& params) {
    if (params.size() != params_.size()) throw ContractError("Mlp::set_params: size mismatch");
    params_ = params;
}

Matrix Mlp::forward_batch(const MatrixRef& inputs, Cache& cache) const {
    if (inputs.rows() != input_dim())
        throw ContractError("Mlp::forward_batch: input dimension mismatch");

    cache.activations.clear();
    cache.activations.reserve(layer_count() + 1);
    cache.activations.push_back(inputs);

    Matrix h = inputs;
    for (int l = 0; l < layer_count(); ++l) {
        Matrix z = (weight(l) * h).colwise() + bias(l);
        if (l == layer_count() - 1) {
            cache.logits = std::move(z);
            break;
        }
        if (layer_has_tanh(l)) z = z.array().tanh();
        cache.activations.push_back(z);
        h = std::move(z);
    }

    Matrix out;
    switch (head_) {
        case OutputHead::SigmoidScalar:
            out = cache.logits.unaryExpr([](Scalar z) { return stable_sigmoid(z); });
            break;
        case OutputHead::SoftmaxVector:
            out = cache.logits;
            softmax_inplace(out);
            break;
        case OutputHead::LinearScalar:
            out = cache.logits;
            break;
    }
    cache.activations.push_back(out);
    return out;
}

Matrix Mlp::forward_batch(const MatrixRef& inputs) const {
    Cache cache;
    return forward_batch(inputs, cache);
}

Vector Mlp::forward(const VectorRef& input) const {
    return forward_batch(input).col(0);
}

Matrix Mlp::log_softmax_batch(const MatrixRef& inputs, Cache& cache) const {
    if (head_ != OutputHead::SoftmaxVector)
        throw ContractError("log_softmax_batch: model has no softmax head");
    forward_batch(inputs, cache);
    Matrix out = cache.logits;
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        const Scalar m = out.col(j).maxCoeff();
        const Scalar lse = m + std::log((out.col(j).array() - m).exp().sum());
        out.col(j).array() -= lse;
    }
    return out;
}

void Mlp::backward_logits_batch(const Cache& cache, const MatrixRef& grad_logits,
                                Vector& grad) const {
    if (grad.size() != params_.size())
        throw ContractError("Mlp::backward: gradient buffer size mismatch");
    if (grad_logits.rows() != output_dim() || grad_logits.cols() != cache.logits.cols())
        throw ContractError("Mlp::backward: upstream gradient shape mismatch");

    Matrix delta = grad_logits;
    for (int l = layer_count() - 1; l >= 0; --l) {
        const Matrix& below = cache.activations[static_cast<std::size_t>(l)];
        const Eigen::Index w_offset = layer_offset(l);
        const Eigen::Index w_size = static_cast<Eigen::Index>(layer_sizes_[l]) * layer_sizes_[l + 1];
        Eigen::Map<Matrix> grad_w(grad.data() + w_offset, layer_sizes_[l + 1], layer_sizes_[l]);
        Eigen::Map<Vector> grad_b(grad.data() + w_offset + w_size, layer_sizes_[l + 1]);
        grad_w.noalias() += delta * below.transpose();
        grad_b.noalias() += delta.rowwise().sum();
        if (l > 0) {
            Matrix next = weight(l).transpose() * delta;
            if (layer_has_tanh(l - 1)) next.array() *= 1.0 - below.array().square();
            delta = std::move(next);
        }
    }
}

void Mlp::backward_batch(const Cache& cache, const MatrixRef& grad_output, Vector& grad) const {
    const Matrix& out = cache.activations.back();
    if (grad_output.rows() != out.rows() || grad_output.cols() != out.cols())
        throw ContractError("Mlp::backward: upstream gradient shape mismatch");

    Matrix grad_logits;
    switch (head_) {
        case OutputHead::SigmoidScalar:
            grad_logits = grad_output.array() * out.array() * (1.0 - out.array());
            break;
        case OutputHead::SoftmaxVector: {
            grad_logits.resize(out.rows(), out.cols());
            for (Eigen::Index j = 0; j < out.cols(); ++j) {
                const Scalar dot = out.col(j).dot(grad_output.col(j));
                grad_logits.col(j) =
                    out.col(j).array() * (grad_output.col(j).array() - dot);
            }
            break;
        }
        case OutputHead::LinearScalar:
            grad_logits = grad_output;
            break;
    }
    backward_logits_batch(cache, grad_logits, grad);
}

AdamW::AdamW(Eigen::Index param_count, Config config) : config_(config) {
    first_moment_ = Vector::Zero(param_count);
    second_moment_ = Vector::Zero(param_count);
}

void AdamW::step(Vector& params, const VectorRef& grad) {
    if (params.size() != first_moment_.size() || grad.size() != first_moment_.size())
        throw ContractError("AdamW::step: size mismatch");
    if (!grad.allFinite())
        throw TrainingError("AdamW::step: non-finite gradient at step " +
                            std::to_string(step_count_ + 1));

    ++step_count_;
    const Scalar b1 = config_.beta1;
    const Scalar b2 = config_.beta2;
    first_moment_ = b1 * first_moment_ + (1.0 - b1) * grad;
    second_moment_ = b2 * second_moment_.array() + (1.0 - b2) * grad.array().square();

    const Scalar corr1 = 1.0 - std::pow(b1, static_cast<Scalar>(step_count_));
    const Scalar corr2 = 1.0 - std::pow(b2, static_cast<Scalar>(step_count_));
    params.array() -= config_.learning_rate *
                      (first_moment_.array() / corr1) /
                      ((second_moment_.array() / corr2).sqrt() + config_.epsilon);
    if (config_.weight_decay != 0.0)
        params.array() -= config_.learning_rate * config_.weight_decay * params.array();
}

GradCheckReport grad_check(const Mlp& model, const LossGradFn& loss, int probes,
                           Scalar fd_step, std::uint64_t seed) {
    Vector analytic = Vector::Zero(model.param_count());
    loss(model, analytic);

    const Eigen::Index n = model.param_count();
    std::vector<Eigen::Index> coords;
    if (probes <= 0 || probes >= n) {
        coords.resize(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
        Rng rng(seed);
        for (int i = 0; i < probes; ++i)
            coords.push_back(rng.uniform_int(static_cast<int>(n)));
    }

    Mlp probe = model;
    Vector scratch = Vector::Zero(n);
    GradCheckReport report;
    report.probed = static_cast<int>(coords.size());
    for (Eigen::Index c : coords) {
        const Scalar saved = probe.params()[c];
        probe.params()[c] = saved + fd_step;
        scratch.setZero();
        const Scalar up = loss(probe, scratch);
        probe.params()[c] = saved - fd_step;
        scratch.setZero();
        const Scalar down = loss(probe, scratch);
        probe.params()[c] = saved;

        const Scalar numeric = (up - down) / (2.0 * fd_step);
        const Scalar denom = std::max({std::abs(analytic[c]), std::abs(numeric), Scalar(1e-6)});
        const Scalar rel = std::abs(analytic[c] - numeric) / denom;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = c;
            report.analytic_at_worst = analytic[c];
            report.numeric_at_worst = numeric;
        }
    }
    return report;
}

Vector one_hot(int index, int size) {
    if (index < 0 || index >= size) throw ContractError("one_hot: index out of range");
    Vector v = Vector::Zero(size);
    v[index] = 1.0;
    return v;
}

Vector encode_state(int state, int num_states) { return one_hot(state, num_states); }

Vector encode_state_action(int state, int action, int num_states, int num_actions) {
    Vector v = Vector::Zero(num_states + num_actions);
    if (state < 0 || state >= num_states || action < 0 || action >= num_actions)
        throw ContractError("encode_state_action: id out of range");
    v[state] = 1.0;
    v[num_states + action] = 1.0;
    return v;
}

void save_checkpoint(const Mlp& model, const std::string& path, long step_count) {
    nlohmann::json header;
    header["layer_sizes"] = model.layer_sizes();
    header["head"] = head_name(model.head());
    header["seed"] = model.seed();
    header["step_count"] = step_count;
    header["param_count"] = model.param_count();
    header["input_projection"] = model.linear_input_projection();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("save_checkpoint: cannot open " + path);
    out << header.dump() << '\n';
    out.write(reinterpret_cast<const char*>(model.params().data()),
              static_cast<std::streamsize>(model.param_count() * sizeof(Scalar)));
    if (!out) throw ConfigError("save_checkpoint: write failed for " + path);
}

Mlp load_checkpoint(const std::string& path, long* step_count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("load_checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ":1: missing checkpoint header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ":1: bad checkpoint header: " + e.what());
    }

    Mlp model(header.at("layer_sizes").get<std::vector<int>>(),
              head_from_name(header.at("head").get<std::string>()),
              header.at("seed").get<std::uint64_t>(),
              header.value("input_projection", false));
    const auto expected = header.at("param_count").get<Eigen::Index>();
    if (expected != model.param_count())
        throw ParseError(path + ":1: parameter count mismatch");
    in.read(reinterpret_cast<char*>(model.params().data()),
            static_cast<std::streamsize>(model.param_count() * sizeof(Scalar)));
    if (in.gcount() != static_cast<std::streamsize>(model.param_count() * sizeof(Scalar)))
        throw ParseError(path + ":2: truncated parameter block");
    if (step_count != nullptr) *step_count = header.value("step_count", 0L);
    return model;
}

}  // namespace safemil
