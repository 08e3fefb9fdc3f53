#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + GOR_CLI_PATH " " + args + " 2>&1";
  std::FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  RunResult r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.out += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// report.json minus the wall-clock field, for idempotence comparisons
json stripped_report(const fs::path& path) {
  json j = json::parse(slurp(path));
  j.erase("timing");
  return j;
}

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::path("cli_scratch") / name) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  std::string str(const std::string& sub = "") const { return (dir / sub).string(); }
};

}  // namespace

TEST_CASE("usage errors exit 2, help exits 0") {
  CHECK(run_cli("").code == 2);
  CHECK(run_cli("frobnicate").code == 2);
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("train --help").code == 0);
  const auto missing = run_cli("train");
  CHECK(missing.code == 2);
  CHECK(missing.out.find("--model") != std::string::npos);
  CHECK(run_cli("train --model mlp-small --hw 4 --mode diag --epochs 1").code == 2);
}

TEST_CASE("gradcheck: clean pass, corrupt hook, loose eps") {
  const auto clean = run_cli("gradcheck");
  CHECK(clean.code == 0);
  CHECK(clean.out.find("worst:") != std::string::npos);
  CHECK(clean.out.find("PASS") != std::string::npos);

  const auto corrupt = run_cli("gradcheck --corrupt group_penalty");
  CHECK(corrupt.code == 1);
  CHECK(corrupt.out.find("group_penalty") != std::string::npos);
  CHECK(corrupt.out.find("FAIL") != std::string::npos);

  CHECK(run_cli("gradcheck --eps 1e-3 --tol 1e-4").code == 0);
}

TEST_CASE("train smoke run writes per-seed reports and a summary") {
  Scratch s("train_smoke");
  const auto r = run_cli("train --model mlp-small --hw 4 --epochs 2 --seeds 0,1 --out " + s.str());
  CHECK(r.code == 0);
  CHECK(r.out.find("summary over 2 seed(s)") != std::string::npos);
  for (const char* seed : {"seed0", "seed1"}) {
    CHECK(fs::exists(s.dir / seed / "metrics.csv"));
    CHECK(fs::exists(s.dir / seed / "report.json"));
    CHECK(fs::exists(s.dir / seed / "model.gork"));
  }
  CHECK(fs::exists(s.dir / "summary.json"));

  const json rep = json::parse(slurp(s.dir / "seed0" / "report.json"));
  CHECK(rep.at("config").at("model") == "mlp-small");
  CHECK(rep.at("config").at("epochs") == 2);
  CHECK(rep.at("config").at("reg").at("lambda") == 1e-2);
  CHECK(rep.at("config").at("data").at("hw") == 4);
  CHECK(rep.at("epochs").size() == 2);
  CHECK(rep.at("timing").contains("wall_seconds"));
}

TEST_CASE("re-running a command overwrites byte-identical payloads") {
  Scratch s("train_idem");
  const std::string args =
      "train --model mlp-small --hw 4 --epochs 2 --seeds 3 --lambda 0.01 --out " + s.str();
  CHECK(run_cli(args).code == 0);
  const std::string csv_a = slurp(s.dir / "seed3" / "metrics.csv");
  const json rep_a = stripped_report(s.dir / "seed3" / "report.json");
  CHECK(run_cli(args).code == 0);
  CHECK(slurp(s.dir / "seed3" / "metrics.csv") == csv_a);
  CHECK(stripped_report(s.dir / "seed3" / "report.json") == rep_a);
}

TEST_CASE("config file values apply and flags override them") {
  Scratch s("train_cfg");
  {
    std::ofstream cfg(s.dir / "cfg.json");
    cfg << R"({"train": {"model": "mlp-small", "epochs": 1, "hw": 4, "lambda": 0.0,
               "samples_per_class": 30}})";
  }
  const auto r = run_cli("train --config " + s.str("cfg.json") + " --epochs 3 --out " +
                         s.str("out"));
  CHECK(r.code == 0);
  const json rep = json::parse(slurp(s.dir / "out" / "seed0" / "report.json"));
  CHECK(rep.at("config").at("epochs") == 3);           // flag wins
  CHECK(rep.at("config").at("model") == "mlp-small");  // file value kept
  CHECK(rep.at("config").at("reg").at("lambda") == 0.0);

  {
    std::ofstream cfg(s.dir / "bad.json");
    cfg << R"({"train": {"model": "mlp-small", "hw": 4, "leraning_rate": 0.1}})";
  }
  const auto bad = run_cli("train --config " + s.str("bad.json") + " --out " + s.str("out2"));
  CHECK(bad.code == 2);
  CHECK(bad.out.find("leraning_rate") != std::string::npos);

  {
    std::ofstream cfg(s.dir / "badsec.json");
    cfg << R"({"trian": {"model": "mlp-small"}})";
  }
  CHECK(run_cli("train --config " + s.str("badsec.json")).code == 2);
}

TEST_CASE("bench default sweep halves MACs row by row") {
  Scratch s("bench_default");
  const auto r = run_cli("bench --reps 2 --out " + s.str());
  CHECK(r.code == 0);
  std::ifstream in(s.dir / "bench.csv");
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "N,macs,ns_median,ns_p10,ns_p90,bytes");
  long long prev = 0;
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    const long long macs = std::stoll(line.substr(c1 + 1, c2 - c1 - 1));
    if (prev) CHECK(macs * 2 == prev);
    prev = macs;
  }
  CHECK(rows == 6);

  const json rep = json::parse(slurp(s.dir / "bench.json"));
  CHECK(rep.at("config").at("shape") == "256x256x3x3");
  CHECK(rep.at("results").size() == 6);
}

TEST_CASE("bench custom shape follows the formula") {
  Scratch s("bench_shape");
  const auto r = run_cli("bench --shape 64x64x3x3 --n 1,2 --reps 2 --out " + s.str());
  CHECK(r.code == 0);
  const json rep = json::parse(slurp(s.dir / "bench.json"));
  CHECK(rep.at("results").at(0).at("macs") == 64LL * 64 * 64 * 9);
  CHECK(rep.at("results").at(1).at("macs") == 64LL * 64 * 64 * 9 / 2);
}

TEST_CASE("bench rejects non-divisor N and bad shapes") {
  CHECK(run_cli("bench --n 3 --reps 1 --out cli_scratch/bench_bad").code == 2);
  CHECK(run_cli("bench --shape 64x64x3 --out cli_scratch/bench_bad2").code == 2);
  CHECK(run_cli("bench --shape abc --out cli_scratch/bench_bad3").code == 2);
}

TEST_CASE("GOR_THREADS enables the parallel bench series") {
  Scratch s("bench_par");
  const auto r = run_cli("bench --shape 32x32x3x3 --n 1,2 --reps 2 --out " + s.str(),
                         "GOR_THREADS=2");
  CHECK(r.code == 0);
  CHECK(fs::exists(s.dir / "bench_parallel.csv"));
  const json rep = json::parse(slurp(s.dir / "bench.json"));
  REQUIRE(rep.contains("parallel_results"));
  CHECK(rep.at("parallel_results").at(0).at("macs") == rep.at("results").at(0).at("macs"));
}

TEST_CASE("divergent training exits 3") {
  Scratch s("train_div");
  const auto r = run_cli("train --model mlp-small --hw 4 --epochs 3 --lr 1e8 --lambda 1 "
                         "--scope fc1,fc2 --out " +
                         s.str());
  CHECK(r.code == 3);
  CHECK(r.out.find("divergence") != std::string::npos);
}

TEST_CASE("ortho-report on a fresh adapter shows the zero-init deviation") {
  Scratch s("ortho_fresh");
  // lr 0 keeps the zero-init up matrix: every group deviation == group size
  CHECK(run_cli("train --model adapter-probe --epochs 1 --lr 0 --seeds 9 "
                "--scope adapter-up-only --n-groups 4 --out " +
                s.str())
            .code == 0);
  const auto r = run_cli("ortho-report --model-file " + s.str("seed9/model.gork") +
                         " --model adapter-probe --scope adapter-up-only --n-groups 4 --out " +
                         s.str("ortho"));
  CHECK(r.code == 0);
  const json rep = json::parse(slurp(s.dir / "ortho" / "ortho.json"));
  const auto& up = rep.at("layers").at("ad.up");
  REQUIRE(up.at("groups").size() == 4);  // effective N: min(4, 32/4) = 4
  for (const auto& g : up.at("groups")) CHECK(g.get<double>() == 8.0);
  CHECK(up.at("min_eig").at(0) == 0.0);
}

TEST_CASE("ortho-report matches the training run's final CSV") {
  Scratch s("ortho_match");
  CHECK(run_cli("train --model adapter-probe --epochs 3 --seeds 4 --lambda 0.01 "
                "--scope adapter-up-only --n-groups 4 --out " +
                s.str())
            .code == 0);
  const auto r = run_cli("ortho-report --model-file " + s.str("seed4/model.gork") +
                         " --model adapter-probe --scope adapter-up-only --n-groups 4 --out " +
                         s.str("ortho"));
  CHECK(r.code == 0);

  // final mean_dev column of the metrics CSV
  std::ifstream in(s.dir / "seed4" / "metrics.csv");
  std::string line, last;
  std::getline(in, line);  // header
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  const double csv_dev = std::stod(last.substr(last.rfind(',') + 1));

  const json rep = json::parse(slurp(s.dir / "ortho" / "ortho.json"));
  double mean = 0;
  int layers = 0;
  for (const auto& [key, entry] : rep.at("layers").items()) {
    double sum = 0;
    for (const auto& g : entry.at("groups")) sum += g.get<double>();
    mean += sum / entry.at("groups").size();
    ++layers;
  }
  mean /= layers;
  CHECK(mean == doctest::Approx(csv_dev).epsilon(1e-9));
}

TEST_CASE("ortho-report error paths") {
  CHECK(run_cli("ortho-report --model-file does_not_exist.gork --model mlp-small --hw 4").code ==
        2);
  Scratch s("ortho_corrupt");
  {
    std::ofstream f(s.dir / "bad.gork", std::ios::binary);
    f << "NOT A MODEL FILE";
  }
  CHECK(run_cli("ortho-report --model-file " + s.str("bad.gork") + " --model mlp-small --hw 4")
            .code == 2);
  CHECK(run_cli("ortho-report --model adapter-probe").code == 2);  // --model-file required
}
