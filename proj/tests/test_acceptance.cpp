#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "gor/cost.hpp"
#include "gor/gradcheck.hpp"
#include "gor/grouping.hpp"
#include "gor/objective.hpp"
#include "gor/regularizer.hpp"
#include "gor/trainer.hpp"

namespace fs = std::filesystem;
using gor::Index;
using gor::PartitionMode;
using gor::TapeXd;
using gor::TensorXd;

namespace {

void report(int criterion, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  CHECK_MESSAGE(ok, "criterion ", criterion, ": ", detail);
}

int run_cli(const std::string& args) {
  const std::string cmd = GOR_CLI_PATH " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TensorXd random_matrix(Index r, Index c, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> dist(lo, hi);
  TensorXd t = TensorXd::zeros({r, c});
  for (Index i = 0; i < t.numel(); ++i) t.mutable_flat()[i] = dist(rng);
  return t;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool same_values(const TensorXd& a, const TensorXd& b) {
  if (a.shape() != b.shape()) return false;
  for (Index i = 0; i < a.numel(); ++i)
    if (a.flat()[i] != b.flat()[i]) return false;
  return true;
}

char buf[256];

}  // namespace

TEST_CASE("1: gradient correctness via the finite-difference suite") {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = gor::run_gradcheck(1e-5, 1e-6, "");
  const double secs = seconds_since(t0);
  const bool cli_ok = run_cli("gradcheck") == 0;
  std::snprintf(buf, sizeof buf,
                "gradcheck worst rel err %.3e (%s) in %.1fs, cli exit %s",
                rep.worst, rep.worst_name.c_str(), secs, cli_ok ? "0" : "nonzero");
  report(1, rep.pass && cli_ok && secs < 60.0, buf);
}

TEST_CASE("2: N=1 grouped penalty equals the whole-layer penalty") {
  std::mt19937_64 rng(202);
  double worst = 0;
  for (int rep_i = 0; rep_i < 100; ++rep_i) {
    TensorXd w = random_matrix(6, 12, rng);
    const auto part = gor::make_partition(PartitionMode::inter, 1, 12);
    auto [grouped, groups] = gor::layer_penalty(w, part);
    const double so = gor::so_penalty(w).value();
    const double diff =
        std::abs(grouped.value() - so) / std::max(1.0, std::abs(so));
    worst = std::max(worst, diff);
  }
  std::snprintf(buf, sizeof buf, "100 random 6x12 matrices, worst relative gap %.3e", worst);
  report(2, worst <= 1e-12, buf);
}

TEST_CASE("3: rank lower bound for 8 filters in 3 dimensions") {
  std::mt19937_64 rng(303);
  double min_penalty = 1e300, max_min_eig = -1e300;
  for (int rep_i = 0; rep_i < 50; ++rep_i) {
    TensorXd w = random_matrix(3, 8, rng);
    min_penalty = std::min(min_penalty, gor::group_penalty(w).value());
    const auto part = gor::make_partition(PartitionMode::inter, 1, 8);
    const auto eigs = gor::gram_eig_summary<double>(w.mat(), part);
    max_min_eig = std::max(max_min_eig, std::abs(eigs.min_eig[0]));
  }
  std::snprintf(buf, sizeof buf, "50 random 3x8 groups: min penalty %.9f, max |min eig| %.2e",
                min_penalty, max_min_eig);
  report(3, min_penalty >= 5.0 - 1e-9 && max_min_eig < 1e-10, buf);
}

TEST_CASE("4: inter/intra divergence on the constructed example") {
  TensorXd w = TensorXd::matrix({{1, 1, 0, 0}, {0, 0, 1, 1}});
  auto [pi, gi] = gor::layer_penalty(w, gor::make_partition(PartitionMode::inter, 2, 4));
  auto [px, gx] = gor::layer_penalty(w, gor::make_partition(PartitionMode::intra, 2, 4));
  std::snprintf(buf, sizeof buf, "columns (e1,e1,e2,e2): inter penalty %g, intra penalty %g",
                pi.value(), px.value());
  report(4, pi.value() == 4.0 && px.value() == 0.0, buf);
}

TEST_CASE("5: cost model matches the instrumented multiply counter exactly") {
  bool all_exact = true;
  for (auto [c_in, c_out] : {std::pair<Index, Index>{2304, 256}, {576, 64}}) {
    TensorXd w = TensorXd::zeros({c_in, c_out});
    for (Index n : {1, 2, 4, 8, 16, 32}) {
      gor::CostQuery q;
      q.c_in = c_in;
      q.c_out = c_out;
      q.n = n;
      q.mode = gor::CostQuery::Mode::grouped;
      const auto part = gor::make_partition(PartitionMode::inter, n, c_out);
      gor::macs::ScopedCount scope;
      gor::macs::reset();
      auto [p, groups] = gor::layer_penalty(w, part);
      if (gor::macs::count() != gor::cost_model_macs(q)) all_exact = false;
    }
  }
  gor::CostQuery q16;
  q16.c_in = 2304;
  q16.c_out = 256;
  q16.n = 16;
  q16.mode = gor::CostQuery::Mode::grouped;
  gor::CostQuery qf = q16;
  qf.mode = gor::CostQuery::Mode::full;
  const long long grouped = gor::cost_model_macs(q16);
  const long long full = gor::cost_model_macs(qf);
  const bool headline = grouped == 9437184 && grouped * 16 == full;
  std::snprintf(buf, sizeof buf,
                "counter == model for both shapes, N in {1..32}; default shape at N=16: "
                "%lld MACs (= full/16: %s)",
                grouped, grouped * 16 == full ? "yes" : "no");
  report(5, all_exact && headline, buf);
}

TEST_CASE("6: median penalty runtime is monotone non-increasing in N") {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<Index> ns{1, 2, 4, 8, 16, 32};
  const auto rows = gor::run_bench(2304, 256, ns, 30, 0);
  const double secs = seconds_since(t0);
  int inversions = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].ns_median > rows[i - 1].ns_median) ++inversions;
  std::ostringstream medians;
  for (const auto& r : rows) medians << r.ns_median / 1e6 << "ms ";
  std::snprintf(buf, sizeof buf, "medians over N {1..32}: %s- %d adjacent inversion(s), %.1fs",
                medians.str().c_str(), inversions, secs);
  report(6, inversions <= 1 && secs < 300.0, buf);
}

TEST_CASE("7: regularization shrinks Gram deviation without hurting accuracy") {
  const auto t0 = std::chrono::steady_clock::now();
  double dev_reg = 0, dev_base = 0, acc_reg = 0, acc_base = 0;
  for (std::uint64_t seed : {0, 1, 2}) {
    gor::TrainConfig cfg;  // conv-gn-small, 30 epochs, lr 0.1, batch 32, sigma 0.15
    cfg.seed = seed;
    cfg.reg.lambda = 1e-2;
    cfg.reg.requested_n = 16;
    cfg.reg.mode = PartitionMode::inter;
    const auto reg = gor::train(cfg);
    dev_reg += reg.report.epochs.back().mean_dev / 3.0;
    acc_reg += reg.report.epochs.back().acc / 3.0;

    cfg.reg.lambda = 0;
    const auto base = gor::train(cfg);
    dev_base += base.report.epochs.back().mean_dev / 3.0;
    acc_base += base.report.epochs.back().acc / 3.0;
  }
  const double secs = seconds_since(t0);
  const double ratio = dev_base / std::max(dev_reg, 1e-300);
  std::snprintf(buf, sizeof buf,
                "mean dev %.3g vs %.3g (%.0fx reduction), mean acc %.4f vs %.4f, %.0fs",
                dev_reg, dev_base, ratio, acc_reg, acc_base, secs);
  report(7, ratio >= 10.0 && (acc_base - acc_reg) < 0.02 && secs < 900.0, buf);
}

TEST_CASE("8: pure-penalty optimization converges on a random 8x16 layer") {
  std::mt19937_64 rng(808);
  TensorXd w = random_matrix(8, 16, rng);
  const auto part = gor::make_partition(PartitionMode::inter, 4, 16);
  const double lambda = 1e-2, lr = 0.1, momentum = 0.9;
  TensorXd::Flat velocity = TensorXd::Flat::Zero(w.numel());
  double penalty = 1e300;
  int steps = 0;
  for (; steps < 2000; ++steps) {
    TapeXd tape;
    tape.watch(w);
    auto [p, groups] = gor::layer_penalty(w, part);
    penalty = p.value();
    if (penalty < 1e-6) break;
    gor::backward(gor::scalar_mul(p, lambda));
    TensorXd::Flat grad = w.grad();
    gor::sgd_step(w.mutable_flat(), grad, lr, momentum, velocity);
    w.zero_grad();
  }
  std::snprintf(buf, sizeof buf, "N=4, lr 0.1: penalty %.3e after %d steps", penalty, steps);
  report(8, penalty < 1e-6 && steps < 2000, buf);
}

TEST_CASE("9: adapter scoping hits only the up matrices") {
  gor::TrainConfig cfg;
  cfg.model = "adapter-probe";
  cfg.epochs = 5;
  cfg.seed = 1;
  cfg.data.samples_per_class = 60;
  cfg.reg.lambda = 1e-2;
  cfg.reg.requested_n = 4;
  cfg.reg.scope = gor::parse_scope("adapter-up-only");

  gor::TrainConfig init_cfg = cfg;
  init_cfg.lr = 0;
  init_cfg.epochs = 1;
  const auto init = gor::train(init_cfg);  // lr 0 run: final params == init

  const auto trained = gor::train(cfg);
  const auto plan = gor::make_reg_plan(trained.model, cfg.reg);
  const auto rep = gor::penalty_report_direct(trained.model, plan, cfg.reg.lambda, 1);
  bool only_up = !rep.layers.empty();
  for (const auto& [key, entry] : rep.layers)
    if (key.size() < 3 || key.substr(key.size() - 3) != ".up") only_up = false;

  const bool base_frozen =
      same_values(init.model.params.at("ad.base"), trained.model.params.at("ad.base"));
  const bool down_trains =
      !same_values(init.model.params.at("ad.down"), trained.model.params.at("ad.down"));

  gor::TrainConfig pure = cfg;
  pure.task_weight = 0;  // no task loss: down must receive zero gradient
  const auto pure_res = gor::train(pure);
  const bool down_unmoved =
      same_values(init.model.params.at("ad.down"), pure_res.model.params.at("ad.down"));

  // Penalty-only backward with up nudged off its zero saddle: gradient must
  // reach up and nothing else.
  gor::Model m = gor::build_model("adapter-probe", 3, cfg.data.image_hw, 7);
  std::mt19937_64 rng(909);
  TensorXd up = m.params.at("ad.up");
  for (Index i = 0; i < up.numel(); ++i)
    up.mutable_flat()[i] = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  TensorXd down = m.params.at("ad.down");
  TapeXd tape;
  tape.watch(up);
  tape.watch(down);
  auto [loss, rep2] = gor::total_loss(TensorXd::scalar(0.0), m, cfg.reg);
  gor::backward(loss);
  const bool up_grad = up.has_grad() && up.grad().norm() > 0;
  const bool down_no_grad = !down.has_grad() || down.grad().norm() == 0;

  std::snprintf(buf, sizeof buf,
                "report keys up-only: %s; base bit-identical: %s; down moves under task: %s; "
                "down frozen under pure penalty: %s; penalty grad up %s / down %s",
                only_up ? "yes" : "no", base_frozen ? "yes" : "no", down_trains ? "yes" : "no",
                down_unmoved ? "yes" : "no", up_grad ? "nonzero" : "zero",
                down_no_grad ? "zero" : "nonzero");
  report(9, only_up && base_frozen && down_trains && down_unmoved && up_grad && down_no_grad,
         buf);
}

TEST_CASE("10: identical config and seed give byte-identical metric CSVs") {
  fs::remove_all("acc_c10");
  fs::create_directories("acc_c10");
  const std::string args =
      "train --model conv-gn-small --epochs 5 --seeds 0 --lambda 0.01 --samples-per-class 60";
  const int a = run_cli(args + " --out acc_c10/a");
  const int b = run_cli(args + " --out acc_c10/b");
  bool identical = a == 0 && b == 0;
  if (identical)
    identical = slurp("acc_c10/a/seed0/metrics.csv") == slurp("acc_c10/b/seed0/metrics.csv");
  std::snprintf(buf, sizeof buf, "two cmd_train runs (exit %d/%d): CSVs %s", a, b,
                identical ? "byte-identical" : "differ");
  report(10, identical, buf);
  fs::remove_all("acc_c10");
}
