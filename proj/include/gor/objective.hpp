#pragma once

#include <string>
#include <vector>

#include "gor/layers.hpp"
#include "gor/regularizer.hpp"

namespace gor {

/// One regularized weight: which layer it lives in, the report key of the
/// underlying parameter, and the frozen group partition. Partitions are
/// resolved once at plan time (per-layer N via effective_groups) and reused
/// for every step of a run.
struct RegPlanEntry {
  std::size_t layer_index = 0;
  std::string key;
  GroupPartition partition;
  bool size_one_groups = false;
};

struct RegPlan {
  std::vector<RegPlanEntry> entries;
  std::vector<std::string> warnings;
};

bool scope_matches(const RegScope& scope, const LayerSpec& spec);

/// Resolve the config's scope and per-layer group counts against a model.
/// Scope matching zero layers is legal but surfaces a warning. Listing a
/// layer with nothing to regularize is a configuration error.
RegPlan make_reg_plan(const Model& model, const RegConfig& cfg);

/// task + lambda * sum of layer penalties over the plan, on the task tape.
/// With lambda = 0 no penalty ops run and the task scalar passes through.
std::pair<TensorXd, PenaltyReport> total_loss(const TensorXd& task_loss, const Model& model,
                                              const RegPlan& plan, const RegConfig& cfg);

/// Convenience overload that builds the plan on the fly.
std::pair<TensorXd, PenaltyReport> total_loss(const TensorXd& task_loss, const Model& model,
                                              const RegConfig& cfg);

/// Tape-free penalty evaluation of the plan against current weights, for
/// per-epoch diagnostics that must not depend on lambda. `threads` > 1 fans
/// the groups of each layer out over a pool; results are bit-identical to
/// the sequential pass.
PenaltyReport penalty_report_direct(const Model& model, const RegPlan& plan, double lambda,
                                    int threads = 1);

/// Flattened weight values of one plan entry (no tape).
Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> reg_weight_values(
    const Model& model, const RegPlanEntry& entry);

/// Mean over groups per layer, then mean over layers; 0 with an empty plan.
double mean_group_deviation(const PenaltyReport& report);

}  // namespace gor
