#include "gor/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace gor {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent deterministic rng lanes per purpose, all derived from the run
// seed: 0 = dataset, 1 = model init, 2 = shuffling.
std::mt19937_64 rng_lane(std::uint64_t seed, std::uint64_t lane) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(lane)));
}

void fisher_yates(std::vector<Index>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng() % i)]);
}

TensorXd gather_samples(const Dataset& d, const std::vector<Index>& order, std::size_t lo,
                        std::size_t hi, std::vector<int>* labels) {
  const Index per = d.images.numel() / d.images.dim(0);
  Shape shape = d.images.shape();
  shape[0] = static_cast<Index>(hi - lo);
  TensorXd batch = TensorXd::zeros(shape);
  for (std::size_t i = lo; i < hi; ++i) {
    const Index src = order[i];
    batch.mutable_flat().segment(static_cast<Index>(i - lo) * per, per) =
        d.images.flat().segment(src * per, per);
    if (labels) labels->push_back(d.labels[static_cast<std::size_t>(src)]);
  }
  return batch;
}

}  // namespace

std::pair<Dataset, Dataset> make_synthetic_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  auto rng = rng_lane(seed, 0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const Index pix = 3 * spec.image_hw * spec.image_hw;
  const Index train_per = spec.samples_per_class * 4 / 5;
  const Index test_per = spec.samples_per_class - train_per;

  Dataset train, test;
  train.images = TensorXd::zeros({spec.n_classes * train_per, 3, spec.image_hw, spec.image_hw});
  test.images = TensorXd::zeros({spec.n_classes * test_per, 3, spec.image_hw, spec.image_hw});

  Index tr = 0, te = 0;
  for (Index c = 0; c < spec.n_classes; ++c) {
    TensorXd::Flat tmpl(pix);
    for (Index i = 0; i < pix; ++i) tmpl[i] = unif(rng);
    for (Index s = 0; s < spec.samples_per_class; ++s) {
      TensorXd::Flat img = tmpl;
      if (spec.sigma > 0)
        for (Index i = 0; i < pix; ++i) img[i] += spec.sigma * gauss(rng);
      if (s < train_per) {
        train.images.mutable_flat().segment(tr * pix, pix) = img;
        train.labels.push_back(static_cast<int>(c));
        ++tr;
      } else {
        test.images.mutable_flat().segment(te * pix, pix) = img;
        test.labels.push_back(static_cast<int>(c));
        ++te;
      }
    }
  }
  return {std::move(train), std::move(test)};
}

void sgd_step(TensorXd::Flat& param, const TensorXd::Flat& grad, double lr, double momentum,
              TensorXd::Flat& velocity) {
  if (param.size() != grad.size() || param.size() != velocity.size())
    throw ShapeError("sgd_step: param/grad/velocity sizes differ");
  velocity = momentum * velocity + grad;
  param -= lr * velocity;
}

double evaluate(const Model& model, const Dataset& data, Index batch) {
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index(0));
  std::size_t hits = 0;
  for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(batch)) {
    const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(batch));
    std::vector<int> labels;
    TensorXd x = gather_samples(data, order, lo, hi, &labels);
    std::vector<int> pred = argmax_rows(forward(model, x));
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();

  auto [train_set, test_set] = make_synthetic_dataset(cfg.data, cfg.seed);
  Model model = build_model(cfg.model, cfg.data.n_classes, cfg.data.image_hw,
                            rng_lane(cfg.seed, 1)());
  RegPlan plan = make_reg_plan(model, cfg.reg);

  const std::vector<std::string> keys = model.trainable_keys();
  std::map<std::string, TensorXd::Flat> velocity;
  for (const auto& k : keys)
    velocity[k] = TensorXd::Flat::Zero(model.params.at(k).numel());

  auto shuffle_rng = rng_lane(cfg.seed, 2);
  std::vector<Index> order(static_cast<std::size_t>(train_set.size()));
  std::iota(order.begin(), order.end(), Index(0));

  RunReport report;
  report.config = cfg;
  report.warnings = plan.warnings;

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    fisher_yates(order, shuffle_rng);
    double sum_loss = 0, sum_task = 0, sum_pen = 0;
    Index steps = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch));
      std::vector<int> labels;
      TensorXd x = gather_samples(train_set, order, lo, hi, &labels);

      TapeXd tape;
      for (const auto& k : keys) tape.watch(model.params.at(k));
      TensorXd task = softmax_cross_entropy(forward(model, x), labels);
      TensorXd task_scaled =
          cfg.task_weight == 1.0 ? task : scalar_mul(task, cfg.task_weight);
      auto [total, pen_report] = total_loss(task_scaled, model, plan, cfg.reg);

      const double expect = cfg.task_weight * task.value() + cfg.reg.lambda * pen_report.total;
      if (std::abs(total.value() - expect) > 1e-12 * std::max(1.0, std::abs(total.value())))
        throw std::logic_error("objective mismatch: differentiated scalar deviates from "
                               "task + lambda*penalty");
      if (!std::isfinite(total.value()))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                              std::to_string(steps));

      tape.backward(total);
      for (const auto& k : keys) {
        TensorXd& p = model.params.at(k);
        TensorXd::Flat g = p.grad();
        sgd_step(p.mutable_flat(), g, cfg.lr, cfg.momentum, velocity[k]);
        p.zero_grad();
      }

      sum_loss += total.value();
      sum_task += task.value();
      sum_pen += pen_report.total;
      ++steps;
    }

    EpochStats st;
    st.epoch = epoch;
    st.loss = sum_loss / static_cast<double>(steps);
    st.task_loss = sum_task / static_cast<double>(steps);
    st.penalty = sum_pen / static_cast<double>(steps);
    st.acc = evaluate(model, test_set, cfg.batch);
    PenaltyReport diag = penalty_report_direct(model, plan, cfg.reg.lambda);
    st.mean_dev = mean_group_deviation(diag);
    for (const auto& [key, le] : diag.layers)
      st.layer_mean_dev[key] =
          le.groups.empty() ? 0.0 : le.sum / static_cast<double>(le.groups.size());
    report.epochs.push_back(std::move(st));
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(model), std::move(report)};
}

OrthoReport ortho_report(const Model& model, const RegConfig& cfg) {
  RegPlan plan = make_reg_plan(model, cfg);
  OrthoReport out;
  out.penalty = penalty_report_direct(model, plan, cfg.lambda);
  for (const auto& e : plan.entries) {
    auto w = reg_weight_values(model, e);
    out.eigs.emplace(e.key, gram_eig_summary<double>(w, e.partition));
  }
  return out;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochStats>& epochs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "epoch,loss,task_loss,penalty,acc,mean_dev\n";
  char buf[256];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(e.epoch), e.loss, e.task_loss, e.penalty, e.acc,
                  e.mean_dev);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace gor
