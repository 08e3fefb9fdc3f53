#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "gor/cost.hpp"
#include "gor/gradcheck.hpp"
#include "gor/report_json.hpp"
#include "gor/serialize.hpp"
#include "gor/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int thread_budget() {
  if (const char* env = std::getenv("GOR_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

std::string default_out_dir() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[64];
  std::strftime(buf, sizeof buf, "runs/%Y%m%d-%H%M%S", &tm);
  return buf;
}

struct Summary {
  double mean = 0, stdev = 0;
};

Summary mean_std(const std::vector<double>& xs) {
  Summary s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double acc = 0;
    for (double x : xs) acc += (x - s.mean) * (x - s.mean);
    s.stdev = std::sqrt(acc / static_cast<double>(xs.size() - 1));
  }
  return s;
}

struct ShapeArg {
  gor::Index c_out = 256, c_in = 256, h = 3, w = 3;
};

ShapeArg parse_shape(const std::string& s) {
  ShapeArg out;
  gor::Index v[4];
  int n = 0;
  std::size_t pos = 0;
  while (n < 4) {
    std::size_t next = s.find('x', pos);
    const std::string tok = s.substr(pos, next == std::string::npos ? next : next - pos);
    try {
      v[n] = static_cast<gor::Index>(std::stoll(tok));
    } catch (...) {
      throw gor::ConfigError("bad --shape '" + s + "' (expected CoutxCinxHxW)");
    }
    if (v[n] <= 0) throw gor::ConfigError("bad --shape '" + s + "': dims must be positive");
    ++n;
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  if (n != 4 || s.find('x', pos) != std::string::npos)
    throw gor::ConfigError("bad --shape '" + s + "' (expected CoutxCinxHxW)");
  out.c_out = v[0];
  out.c_in = v[1];
  out.h = v[2];
  out.w = v[3];
  return out;
}

json load_config_section(const std::string& path, const std::string& section) {
  if (path.empty()) return json::object();
  return gor::config_section(gor::read_json_file(path), section);
}

void add_reg_flags(CLI::App* cmd, double& lambda, long long& n_groups, std::string& mode,
                   std::string& scope) {
  cmd->add_option("--lambda", lambda, "penalty weight");
  cmd->add_option("--n-groups", n_groups, "requested group count N");
  cmd->add_option("--mode", mode, "partition mode: inter|intra");
  cmd->add_option("--scope", scope, "all-conv | adapter-up-only | comma-separated layer names");
}

void apply_reg_flags(const CLI::App* cmd, gor::RegConfig& reg, double lambda, long long n_groups,
                     const std::string& mode, const std::string& scope) {
  if (cmd->count("--lambda")) reg.lambda = lambda;
  if (cmd->count("--n-groups")) reg.requested_n = static_cast<gor::Index>(n_groups);
  if (cmd->count("--mode")) reg.mode = gor::parse_partition_mode(mode);
  if (cmd->count("--scope")) reg.scope = gor::parse_scope(scope);
}

int run_train(const CLI::App* cmd, const std::string& config_path, std::string out_dir,
              std::string model, long long epochs, long long batch, double lr, double momentum,
              double task_weight, std::vector<unsigned long long> seeds, double lambda,
              long long n_groups, const std::string& mode, const std::string& scope,
              long long n_classes, long long samples_per_class, long long hw, double sigma,
              bool no_save) {
  gor::TrainConfig cfg;
  cfg.model.clear();
  gor::apply_json(cfg, load_config_section(config_path, "train"));
  if (cmd->count("--model")) cfg.model = model;
  if (cmd->count("--epochs")) cfg.epochs = epochs;
  if (cmd->count("--batch")) cfg.batch = batch;
  if (cmd->count("--lr")) cfg.lr = lr;
  if (cmd->count("--momentum")) cfg.momentum = momentum;
  if (cmd->count("--task-weight")) cfg.task_weight = task_weight;
  apply_reg_flags(cmd, cfg.reg, lambda, n_groups, mode, scope);
  if (cmd->count("--n-classes")) cfg.data.n_classes = n_classes;
  if (cmd->count("--samples-per-class")) cfg.data.samples_per_class = samples_per_class;
  if (cmd->count("--hw")) cfg.data.image_hw = hw;
  if (cmd->count("--sigma")) cfg.data.sigma = sigma;
  if (cfg.model.empty())
    throw gor::ConfigError("no model named; pass --model or a config file (see --help)");
  if (seeds.empty()) seeds = {0};

  if (out_dir.empty()) out_dir = default_out_dir();
  fs::create_directories(out_dir);

  std::vector<double> accs, devs;
  for (auto seed : seeds) {
    cfg.seed = seed;
    cfg.validate();
    gor::TrainResult res = gor::train(cfg);
    const fs::path dir = fs::path(out_dir) / ("seed" + std::to_string(seed));
    fs::create_directories(dir);
    gor::write_metrics_csv((dir / "metrics.csv").string(), res.report.epochs);
    gor::write_json_file((dir / "report.json").string(), gor::to_json(res.report));
    if (!no_save) gor::save_params((dir / "model.gork").string(), res.model.params);
    const auto& last = res.report.epochs.back();
    accs.push_back(last.acc);
    devs.push_back(last.mean_dev);
    std::printf("seed %llu: acc=%.4f mean_dev=%.6g penalty=%.6g (%.1fs)\n",
                static_cast<unsigned long long>(seed), last.acc, last.mean_dev, last.penalty,
                res.report.wall_seconds);
    for (const auto& w : res.report.warnings) std::printf("  warning: %s\n", w.c_str());
  }
  const Summary sa = mean_std(accs), sd = mean_std(devs);
  std::printf("summary over %zu seed(s): acc %.4f +/- %.4f, mean_dev %.6g +/- %.6g\n",
              seeds.size(), sa.mean, sa.stdev, sd.mean, sd.stdev);
  json summary{{"config", gor::to_json(cfg)},
               {"seeds", seeds},
               {"acc", {{"mean", sa.mean}, {"std", sa.stdev}}},
               {"mean_dev", {{"mean", sd.mean}, {"std", sd.stdev}}}};
  summary["config"].erase("seed");
  gor::write_json_file((fs::path(out_dir) / "summary.json").string(), summary);
  return 0;
}

int run_bench(const CLI::App* cmd, const std::string& config_path, std::string out_dir,
              const std::string& shape, std::vector<long long> n_list, long long reps,
              unsigned long long seed) {
  json sec = load_config_section(config_path, "bench");
  for (auto it = sec.begin(); it != sec.end(); ++it)
    if (it.key() != "shape" && it.key() != "n" && it.key() != "reps" && it.key() != "seed")
      throw gor::ConfigError("unknown key '" + it.key() + "' in bench config");
  std::string shape_s = sec.value("shape", std::string("256x256x3x3"));
  std::vector<long long> ns = sec.value("n", std::vector<long long>{1, 2, 4, 8, 16, 32});
  long long reps_v = sec.value("reps", 30);
  unsigned long long seed_v = sec.value("seed", 0ULL);
  if (cmd->count("--shape")) shape_s = shape;
  if (cmd->count("--n")) ns = n_list;
  if (cmd->count("--reps")) reps_v = reps;
  if (cmd->count("--seed")) seed_v = seed;

  const ShapeArg sh = parse_shape(shape_s);
  const gor::Index c_in_flat = sh.c_in * sh.h * sh.w;
  std::vector<gor::Index> n_idx;
  for (long long n : ns) n_idx.push_back(static_cast<gor::Index>(n));

  if (out_dir.empty()) out_dir = default_out_dir();
  fs::create_directories(out_dir);

  auto rows = gor::run_bench(c_in_flat, sh.c_out, n_idx, static_cast<int>(reps_v), seed_v);
  gor::write_bench_csv((fs::path(out_dir) / "bench.csv").string(), rows);
  json out{{"config", {{"shape", shape_s},
                       {"c_in_flat", c_in_flat},
                       {"c_out", sh.c_out},
                       {"n", ns},
                       {"reps", reps_v},
                       {"seed", seed_v}}},
           {"results", gor::to_json(rows)}};
  std::printf("N,macs,ns_median,ns_p10,ns_p90,bytes\n");
  for (const auto& r : rows)
    std::printf("%lld,%lld,%lld,%lld,%lld,%lld\n", static_cast<long long>(r.n), r.macs,
                r.ns_median, r.ns_p10, r.ns_p90, r.bytes);

  const int threads = thread_budget();
  if (threads > 1) {
    auto prows =
        gor::run_bench_parallel(c_in_flat, sh.c_out, n_idx, static_cast<int>(reps_v), seed_v,
                                threads);
    gor::write_bench_csv((fs::path(out_dir) / "bench_parallel.csv").string(), prows);
    out["parallel_results"] = gor::to_json(prows);
    out["config"]["threads"] = threads;
    std::printf("parallel series (%d threads) written alongside\n", threads);
  }
  gor::write_json_file((fs::path(out_dir) / "bench.json").string(), out);
  return 0;
}

int run_gradcheck(const CLI::App* cmd, const std::string& config_path, double eps, double tol,
                  const std::string& corrupt) {
  json sec = load_config_section(config_path, "gradcheck");
  for (auto it = sec.begin(); it != sec.end(); ++it)
    if (it.key() != "eps" && it.key() != "tol")
      throw gor::ConfigError("unknown key '" + it.key() + "' in gradcheck config");
  double eps_v = sec.value("eps", 1e-5);
  double tol_v = sec.value("tol", 1e-6);
  if (cmd->count("--eps")) eps_v = eps;
  if (cmd->count("--tol")) tol_v = tol;

  const auto report = gor::run_gradcheck(eps_v, tol_v, corrupt);
  for (const auto& c : report.checks)
    std::printf("%-28s rel_err=%.3e %s\n", c.name.c_str(), c.rel_err, c.pass ? "ok" : "FAIL");
  std::printf("worst: %s rel_err=%.3e (tol %.1e) -> %s\n", report.worst_name.c_str(),
              report.worst, tol_v, report.pass ? "PASS" : "FAIL");
  return report.pass ? 0 : 1;
}

int run_ortho(const CLI::App* cmd, const std::string& config_path, std::string out_dir,
              const std::string& model_file, std::string model, long long n_classes, long long hw,
              double lambda, long long n_groups, const std::string& mode,
              const std::string& scope) {
  json sec = load_config_section(config_path, "ortho-report");
  for (auto it = sec.begin(); it != sec.end(); ++it)
    if (it.key() != "model" && it.key() != "n_classes" && it.key() != "hw" && it.key() != "reg")
      throw gor::ConfigError("unknown key '" + it.key() + "' in ortho-report config");
  std::string model_v = sec.value("model", std::string(""));
  long long n_classes_v = sec.value("n_classes", 3);
  long long hw_v = sec.value("hw", 6);
  gor::RegConfig reg;
  if (sec.contains("reg")) gor::apply_json(reg, sec.at("reg"));
  if (cmd->count("--model")) model_v = model;
  if (cmd->count("--n-classes")) n_classes_v = n_classes;
  if (cmd->count("--hw")) hw_v = hw;
  apply_reg_flags(cmd, reg, lambda, n_groups, mode, scope);
  if (model_v.empty()) throw gor::ConfigError("no model named; pass --model");

  gor::Model m = gor::build_model(model_v, static_cast<gor::Index>(n_classes_v),
                                  static_cast<gor::Index>(hw_v), 0);
  gor::load_into_model(model_file, m);
  const gor::OrthoReport rep = gor::ortho_report(m, reg);

  for (const auto& [key, le] : rep.penalty.layers) {
    const auto& eig = rep.eigs.at(key);
    const double lo = eig.min_eig.empty() ? 0 : *std::min_element(eig.min_eig.begin(), eig.min_eig.end());
    const double hi = eig.max_eig.empty() ? 0 : *std::max_element(eig.max_eig.begin(), eig.max_eig.end());
    std::printf("%-20s groups=%lld sum=%.6g eig=[%.3g, %.3g]%s\n", key.c_str(),
                static_cast<long long>(le.n), le.sum, lo, hi,
                le.size_one_groups ? " (size-1 groups: normalization only)" : "");
  }
  std::printf("total=%.6g lambda=%g\n", rep.penalty.total, rep.penalty.lambda);
  for (const auto& w : rep.penalty.warnings) std::printf("warning: %s\n", w.c_str());

  if (out_dir.empty()) out_dir = default_out_dir();
  fs::create_directories(out_dir);
  json out = gor::to_json(rep);
  out["config"] = json{{"model", model_v},
                       {"model_file", model_file},
                       {"n_classes", n_classes_v},
                       {"hw", hw_v},
                       {"reg", gor::to_json(reg)}};
  gor::write_json_file((fs::path(out_dir) / "ortho.json").string(), out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grouped weight-orthogonalization: train, bench, verify, report"};
  app.require_subcommand(1);

  std::string config_path, out_dir;

  auto* train = app.add_subcommand("train", "train a catalog model with the penalty");
  std::string model, mode, scope;
  long long epochs = 30, batch = 32, n_groups = 16, n_classes = 3, samples_per_class = 200,
            hw = 6;
  double lr = 0.1, momentum = 0.9, task_weight = 1.0, lambda = 1e-2, sigma = 0.15;
  std::vector<unsigned long long> seeds;
  bool no_save = false;
  train->add_option("--config", config_path, "JSON config file");
  train->add_option("--out", out_dir, "output directory (default runs/<timestamp>)");
  train->add_option("--model", model, "catalog model: conv-gn-small | mlp-small | adapter-probe");
  train->add_option("--epochs", epochs);
  train->add_option("--batch", batch);
  train->add_option("--lr", lr);
  train->add_option("--momentum", momentum);
  train->add_option("--task-weight", task_weight, "0 trains on the penalty alone");
  train->add_option("--seeds", seeds, "comma-separated seed list")->delimiter(',');
  add_reg_flags(train, lambda, n_groups, mode, scope);
  train->add_option("--n-classes", n_classes);
  train->add_option("--samples-per-class", samples_per_class);
  train->add_option("--hw", hw, "square image side");
  train->add_option("--sigma", sigma, "dataset noise level");
  train->add_flag("--no-save", no_save, "skip writing model.gork");

  auto* bench = app.add_subcommand("bench", "penalty cost model + wall-clock benchmark");
  std::string shape = "256x256x3x3";
  std::vector<long long> n_list;
  long long reps = 30;
  unsigned long long bench_seed = 0;
  bench->add_option("--config", config_path, "JSON config file");
  bench->add_option("--out", out_dir, "output directory (default runs/<timestamp>)");
  bench->add_option("--shape", shape, "kernel as CoutxCinxHxW");
  bench->add_option("--n", n_list, "comma-separated group counts")->delimiter(',');
  bench->add_option("--reps", reps, "timed repetitions per N");
  bench->add_option("--seed", bench_seed, "weight seed");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  double eps = 1e-5, tol = 1e-6;
  std::string corrupt;
  gradcheck->add_option("--config", config_path, "JSON config file");
  gradcheck->add_option("--eps", eps, "finite-difference step");
  gradcheck->add_option("--tol", tol, "relative-error tolerance");
  gradcheck->add_option("--corrupt", corrupt,
                        "testing hook: damage the named check's analytic gradient");

  auto* ortho = app.add_subcommand("ortho-report", "Gram deviation + eigenvalue report");
  std::string model_file, ortho_model;
  long long ortho_classes = 3, ortho_hw = 6;
  double ortho_lambda = 1e-2;
  long long ortho_n = 16;
  std::string ortho_mode, ortho_scope;
  ortho->add_option("--config", config_path, "JSON config file");
  ortho->add_option("--out", out_dir, "output directory (default runs/<timestamp>)");
  ortho->add_option("--model-file", model_file, "saved .gork parameter file")->required();
  ortho->add_option("--model", ortho_model, "catalog model the file belongs to");
  ortho->add_option("--n-classes", ortho_classes);
  ortho->add_option("--hw", ortho_hw);
  add_reg_flags(ortho, ortho_lambda, ortho_n, ortho_mode, ortho_scope);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    std::fprintf(stderr, "usage: gor train|bench|gradcheck|ortho-report [--config FILE] [flags]\n");
    return 2;
  }

  try {
    if (train->parsed())
      return run_train(train, config_path, out_dir, model, epochs, batch, lr, momentum,
                       task_weight, seeds, lambda, n_groups, mode, scope, n_classes,
                       samples_per_class, hw, sigma, no_save);
    if (bench->parsed())
      return run_bench(bench, config_path, out_dir, shape, n_list, reps, bench_seed);
    if (gradcheck->parsed()) return run_gradcheck(gradcheck, config_path, eps, tol, corrupt);
    if (ortho->parsed())
      return run_ortho(ortho, config_path, out_dir, model_file, ortho_model, ortho_classes,
                       ortho_hw, ortho_lambda, ortho_n, ortho_mode, ortho_scope);
  } catch (const gor::DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 3;
  } catch (const gor::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const gor::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
