#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gor/tensor.hpp"

namespace gor {

struct CostQuery {
  enum class Mode { full, grouped };
  Index c_in = 0;
  Index c_out = 0;
  Index n = 1;  // grouped only
  Mode mode = Mode::full;
};

/// Gram-product MACs are the headline number (schoolbook matmul count); the
/// diagonal subtract and square-sum passes are lower-order and reported
/// separately, as is the transient working set (group Gram matrices plus
/// their adjoints, float64).
struct CostBreakdown {
  long long gram_macs = 0;
  long long elementwise_ops = 0;
  long long transient_bytes = 0;
};

long long cost_model_macs(const CostQuery& q);
CostBreakdown cost_model(const CostQuery& q);

struct BenchResult {
  Index n = 1;
  long long macs = 0;
  long long ns_median = 0;
  long long ns_p10 = 0;
  long long ns_p90 = 0;
  long long bytes = 0;
};

/// Time the grouped penalty (forward + backward through the tape) on one
/// C_in x C_out weight for each N, identical seeded weights throughout.
/// Before timing each N, the instrumented multiply counter of one forward
/// pass is asserted equal to cost_model's Gram term.
std::vector<BenchResult> run_bench(Index c_in, Index c_out, const std::vector<Index>& n_list,
                                   int reps, std::uint64_t seed);

/// Same measurement over the closed-form evaluator with a thread pool over
/// groups (forward + analytic gradient).
std::vector<BenchResult> run_bench_parallel(Index c_in, Index c_out,
                                            const std::vector<Index>& n_list, int reps,
                                            std::uint64_t seed, int threads);

void write_bench_csv(const std::string& path, const std::vector<BenchResult>& rows);

}  // namespace gor
