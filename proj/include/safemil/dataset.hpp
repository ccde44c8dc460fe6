#pragma once

#include "safemil/cmdp.hpp"
#include "safemil/common.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace safemil {

enum class DatasetRole { NonPreferred, Unlabeled, EvalOnly };

std::string role_name(DatasetRole role);
DatasetRole role_from_name(const std::string& name);

/// Trajectory collection with an eval-only shadow: hidden annotations and
/// per-trajectory provenance (was the source labeled preferred?) live beside
/// the training view and are stripped by training_view()/save_dataset.
struct TrajectoryDataset {
    std::vector<Trajectory> trajectories;
    DatasetRole role = DatasetRole::Unlabeled;
    std::optional<Scalar> alpha;           // true preferred fraction, unlabeled sets only
    std::vector<bool> preferred_provenance;  // empty when unknown (training views)
    std::string provenance;                // generator config hash

    int size() const { return static_cast<int>(trajectories.size()); }
    bool has_annotations() const;

    /// Copy carrying only (state, action) sequences.
    TrajectoryDataset training_view() const;
};

/// Rolls out n trajectories, half from the epsilon-noised safe policy and
/// half from the epsilon-noised risky policy, keeping annotations.
std::vector<Trajectory> generate_raw_pool(const TabularCmdp& env, const Policy& safe,
                                          const Policy& risky, int n, Scalar epsilon,
                                          std::uint64_t seed);

struct LabelRule {
    Scalar reward_quantile = 0.5;   // pass if total reward >= this quantile
    Scalar cost_hi_quantile = 0.75; // non-preferred if total cost >= this quantile
    Scalar cost_lo_quantile = 0.25; // preferred if total cost <= this quantile
    bool discounted = false;        // use discounted totals instead of plain sums
    Scalar gamma = 0.99;
};

struct LabeledPool {
    std::vector<Trajectory> preferred;
    std::vector<Trajectory> non_preferred;
    std::vector<Trajectory> discarded;
};

/// Splits an annotated pool by total reward/cost quantiles. Reward comparison
/// is inclusive (>= the quantile) so all-equal-reward pools split purely by
/// cost; coincident cost quantile cuts (no cost spread) raise GenerationError,
/// as do empty classes.
LabeledPool label_pool(const std::vector<Trajectory>& pool, const LabelRule& rule);

struct AssembledDatasets {
    TrajectoryDataset negative;   // D^N
    TrajectoryDataset unlabeled;  // D^U
};

/// Draws (without replacement) n_negative non-preferred trajectories for D^N
/// and round(alpha * n_unlabeled) preferred plus the remainder non-preferred
/// for D^U, shuffled. D^N and D^U use disjoint source trajectories.
AssembledDatasets assemble_datasets(const std::vector<Trajectory>& preferred,
                                    const std::vector<Trajectory>& non_preferred,
                                    int n_unlabeled, int n_negative, Scalar alpha,
                                    std::uint64_t seed);

/// Training view as JSON Lines ({"steps": [[s,a],...]} per line) plus an
/// aligned eval sidecar ({"rewards": [...], "costs": [...], "preferred": ...}).
void save_dataset(const TrajectoryDataset& dataset, const std::string& train_path,
                  const std::string& sidecar_path);

/// Loads a training view. Lines carrying anything besides "steps" are
/// rejected, so reward/cost leakage into training files cannot pass unnoticed.
TrajectoryDataset load_dataset(const std::string& train_path, DatasetRole role);

/// Attaches hidden annotations and provenance from a sidecar file (evaluation
/// flows only). Line counts must match the dataset.
void load_sidecar(TrajectoryDataset& dataset, const std::string& sidecar_path);

/// FNV-1a hex digest used for dataset/config provenance stamps.
std::string provenance_hash(const std::string& text);

}  // namespace safemil
