#include "gor/objective.hpp"

#include <algorithm>

namespace gor {

bool scope_matches(const RegScope& scope, const LayerSpec& spec) {
  switch (scope.kind) {
    case ScopeKind::all_conv:
      return spec.kind == LayerKind::conv2d;
    case ScopeKind::adapter_up_only:
      return spec.kind == LayerKind::adapter;
    case ScopeKind::name_list:
      return std::find(scope.names.begin(), scope.names.end(), spec.name) != scope.names.end();
  }
  return false;
}

RegPlan make_reg_plan(const Model& model, const RegConfig& cfg) {
  cfg.validate();
  RegPlan plan;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& spec = model.layers[i];
    if (!scope_matches(cfg.scope, spec)) continue;
    auto view = regularized_weight_view(model, i);
    if (!view) throw ConfigError("layer '" + spec.name + "' is in scope but has no weight matrix");
    RegPlanEntry e;
    e.layer_index = i;
    e.key = view->key;
    const Index c_out = view->view.dim(1);
    const Index n = effective_groups(cfg.requested_n, c_out);
    e.partition = make_partition(cfg.mode, n, c_out);
    for (const auto& g : e.partition.groups)
      if (g.size() == 1) e.size_one_groups = true;
    plan.entries.push_back(std::move(e));
  }
  if (cfg.scope.kind == ScopeKind::name_list)
    for (const auto& want : cfg.scope.names) {
      bool found = false;
      for (const auto& spec : model.layers) found = found || spec.name == want;
      if (!found) throw ConfigError("scope names unknown layer '" + want + "'");
    }
  if (plan.entries.empty())
    plan.warnings.push_back("scope '" + to_string(cfg.scope) + "' matches no layers in model '" +
                            model.name + "'");
  return plan;
}

std::pair<TensorXd, PenaltyReport> total_loss(const TensorXd& task_loss, const Model& model,
                                              const RegPlan& plan, const RegConfig& cfg) {
  PenaltyReport report;
  report.lambda = cfg.lambda;
  report.warnings = plan.warnings;
  if (cfg.lambda == 0.0 || plan.entries.empty()) return {task_loss, report};

  TensorXd penalty_sum;
  bool first = true;
  for (const auto& e : plan.entries) {
    auto view = regularized_weight_view(model, e.layer_index);
    auto [layer_sum, per_group] = layer_penalty(view->view, e.partition);
    PenaltyReport::LayerEntry le;
    le.groups = std::move(per_group);
    le.sum = layer_sum.value();
    le.n = static_cast<Index>(e.partition.groups.size());
    le.size_one_groups = e.size_one_groups;
    report.total += le.sum;
    report.layers.emplace(e.key, std::move(le));
    penalty_sum = first ? layer_sum : add(penalty_sum, layer_sum);
    first = false;
  }
  return {add(task_loss, scalar_mul(penalty_sum, cfg.lambda)), report};
}

std::pair<TensorXd, PenaltyReport> total_loss(const TensorXd& task_loss, const Model& model,
                                              const RegConfig& cfg) {
  return total_loss(task_loss, model, make_reg_plan(model, cfg), cfg);
}

Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> reg_weight_values(
    const Model& model, const RegPlanEntry& entry) {
  const auto& spec = model.layers.at(entry.layer_index);
  using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  switch (spec.kind) {
    case LayerKind::conv2d: {
      TensorXd k = model.param(spec.name + ".kernel");
      const Index co = k.dim(0), cin = k.numel() / k.dim(0);
      return TensorXd::ConstMatMap(k.flat().data(), co, cin).transpose();
    }
    case LayerKind::linear: {
      TensorXd w = model.param(spec.name + ".weight");
      return MatRM(w.mat());
    }
    case LayerKind::adapter: {
      TensorXd up = model.param(spec.name + ".up");
      return MatRM(up.mat().transpose());
    }
    default:
      throw ConfigError("layer '" + spec.name + "' has no weight matrix");
  }
}

PenaltyReport penalty_report_direct(const Model& model, const RegPlan& plan, double lambda,
                                    int threads) {
  PenaltyReport report;
  report.lambda = lambda;
  report.warnings = plan.warnings;
  for (const auto& e : plan.entries) {
    auto w = reg_weight_values(model, e);
    DirectPenalty dp = layer_penalty_direct<double>(w, e.partition, nullptr, threads);
    PenaltyReport::LayerEntry le;
    le.groups = std::move(dp.groups);
    le.sum = dp.sum;
    le.n = static_cast<Index>(e.partition.groups.size());
    le.size_one_groups = e.size_one_groups;
    report.total += le.sum;
    report.layers.emplace(e.key, std::move(le));
  }
  return report;
}

double mean_group_deviation(const PenaltyReport& report) {
  if (report.layers.empty()) return 0.0;
  double acc = 0;
  for (const auto& [key, le] : report.layers) {
    double layer_mean = 0;
    for (double g : le.groups) layer_mean += g;
    if (!le.groups.empty()) layer_mean /= static_cast<double>(le.groups.size());
    acc += layer_mean;
  }
  return acc / static_cast<double>(report.layers.size());
}

}  // namespace gor
