#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace safemil {

using Scalar = double;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorRef = Eigen::Ref<const Eigen::VectorXd>;
using MatrixRef = Eigen::Ref<const Eigen::MatrixXd>;

/// Invalid sizes, thresholds, or file contents supplied by the user (CLI exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Caller broke an API precondition (shape mismatch, out-of-range id).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// A training run became unusable (NaN loss, degenerate weights); CLI exit code 3.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dataset generation could not satisfy the requested counts or labeling rule.
struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed persisted file; message carries the line number where parsing stopped.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// No policy satisfies the cost constraint of the given CMDP.
struct InfeasibleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// splitmix64 step; used to derive independent child seeds from one master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace safemil
