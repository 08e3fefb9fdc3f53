#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gor/layers.hpp"
#include "gor/objective.hpp"
#include "gor/regularizer.hpp"

namespace gor {

struct DatasetSpec {
  Index n_classes = 3;
  Index samples_per_class = 200;
  Index image_hw = 6;
  double sigma = 0.15;

  void validate() const {
    if (n_classes < 2 || samples_per_class < 5 || image_hw < 1 || sigma < 0)
      throw ConfigError("dataset spec: need n_classes>=2, samples_per_class>=5, image_hw>=1, "
                        "sigma>=0");
  }
};

struct Dataset {
  TensorXd images;  // [N,3,hw,hw]
  std::vector<int> labels;
  Index size() const { return images.dim(0); }
};

/// Per class: one fixed template image in [0,1]^(3*hw*hw), then noisy copies
/// template + N(0, sigma^2). First 80% of each class's samples go to train,
/// the rest to test. Fully determined by (spec, seed).
std::pair<Dataset, Dataset> make_synthetic_dataset(const DatasetSpec& spec, std::uint64_t seed);

/// v <- momentum*v + g;  p <- p - lr*v
void sgd_step(TensorXd::Flat& param, const TensorXd::Flat& grad, double lr, double momentum,
              TensorXd::Flat& velocity);

struct TrainConfig {
  std::string model = "conv-gn-small";
  Index epochs = 30;
  Index batch = 32;
  double lr = 0.1;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  double task_weight = 1.0;  // 0 trains on the penalty alone
  RegConfig reg;
  DatasetSpec data;

  void validate() const {
    if (epochs < 1 || batch < 1 || lr < 0 || momentum < 0 || momentum >= 1 || task_weight < 0)
      throw ConfigError("train config: need epochs>=1, batch>=1, lr>=0, 0<=momentum<1, "
                        "task_weight>=0");
    reg.validate();
    data.validate();
  }
};

struct EpochStats {
  Index epoch = 0;
  double loss = 0;       // mean optimized objective over the epoch's steps
  double task_loss = 0;  // mean unweighted task loss
  double penalty = 0;    // mean unweighted penalty sum
  double acc = 0;        // test accuracy at epoch end
  double mean_dev = 0;   // mean per-group Gram deviation at epoch end
  std::map<std::string, double> layer_mean_dev;
};

struct RunReport {
  TrainConfig config;
  std::vector<EpochStats> epochs;
  double wall_seconds = 0;
  std::vector<std::string> warnings;
};

struct TrainResult {
  Model model;
  RunReport report;
};

/// Minibatch SGD on task_weight*task + lambda*penalty. Pure function of the
/// config: seed fixes init, data, and shuffling. Non-finite loss aborts with
/// a DivergenceError naming the epoch and step.
TrainResult train(const TrainConfig& cfg);

double evaluate(const Model& model, const Dataset& data, Index batch);

struct OrthoReport {
  PenaltyReport penalty;
  std::map<std::string, GramEigSummary> eigs;
};

/// Penalty diagnostics plus per-group Gram eigenvalue extremes for the
/// weights as they currently stand.
OrthoReport ortho_report(const Model& model, const RegConfig& cfg);

void write_metrics_csv(const std::string& path, const std::vector<EpochStats>& epochs);

}  // namespace gor
