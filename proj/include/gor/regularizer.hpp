#pragma once

#include <Eigen/Dense>
#include <cstdlib>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "gor/grouping.hpp"
#include "gor/ops.hpp"
#include "gor/tensor.hpp"

namespace gor {

enum class ScopeKind { all_conv, adapter_up_only, name_list };

struct RegScope {
  ScopeKind kind = ScopeKind::all_conv;
  std::vector<std::string> names;  // name_list only
};

inline RegScope parse_scope(const std::string& s) {
  RegScope sc;
  if (s == "all-conv") {
    sc.kind = ScopeKind::all_conv;
  } else if (s == "adapter-up-only") {
    sc.kind = ScopeKind::adapter_up_only;
  } else {
    sc.kind = ScopeKind::name_list;
    std::size_t start = 0;
    while (start <= s.size()) {
      const std::size_t comma = s.find(',', start);
      const std::string item = s.substr(start, comma == std::string::npos ? comma : comma - start);
      if (!item.empty()) sc.names.push_back(item);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (sc.names.empty()) throw ConfigError("scope '" + s + "' names no layers");
  }
  return sc;
}

inline std::string to_string(const RegScope& sc) {
  switch (sc.kind) {
    case ScopeKind::all_conv:
      return "all-conv";
    case ScopeKind::adapter_up_only:
      return "adapter-up-only";
    default: {
      std::string out;
      for (std::size_t i = 0; i < sc.names.size(); ++i) {
        if (i) out += ',';
        out += sc.names[i];
      }
      return out;
    }
  }
}

struct RegConfig {
  double lambda = 1e-2;
  Index requested_n = 16;
  PartitionMode mode = PartitionMode::inter;
  RegScope scope;

  void validate() const {
    if (lambda < 0) throw ConfigError("lambda must be >= 0");
    if (requested_n < 1) throw ConfigError("requested_n must be >= 1");
  }
};

/// Per-group squared Gram deviations for every regularized weight, plus their
/// grand total (lambda excluded). Keys are "<layer>.<param>".
struct PenaltyReport {
  struct LayerEntry {
    std::vector<double> groups;
    double sum = 0;
    Index n = 1;
    bool size_one_groups = false;
  };
  std::map<std::string, LayerEntry> layers;
  double total = 0;
  double lambda = 0;
  std::vector<std::string> warnings;
};

/// ||W^T W - I||_F^2 for one group of filter columns. The recorded graph is
/// transpose + matmul + diagonal shift + squared norm, so backward yields the
/// closed form 4 W (W^T W - I).
template <typename Scalar>
Tensor<Scalar> group_penalty(const Tensor<Scalar>& w_group) {
  if (w_group.rank() != 2)
    throw ShapeError("group_penalty expects a rank-2 group, got " + shape_str(w_group.shape()));
  return frobenius_sq(sub_identity(matmul(transpose(w_group), w_group)));
}

/// Sum of group_penalty over a partition's groups, in partition order, with
/// the per-group forward values reported alongside the tape scalar.
template <typename Scalar>
std::pair<Tensor<Scalar>, std::vector<double>> layer_penalty(const Tensor<Scalar>& w,
                                                             const GroupPartition& part) {
  if (w.rank() != 2)
    throw ShapeError("layer_penalty expects a rank-2 weight, got " + shape_str(w.shape()));
  if (part.c_out != w.dim(1))
    throw ShapeError("layer_penalty: partition covers " + std::to_string(part.c_out) +
                     " columns but weight has " + std::to_string(w.dim(1)));
  if (part.groups.empty()) throw ConfigError("layer_penalty: empty partition");
  std::vector<double> per_group;
  per_group.reserve(part.groups.size());
  Tensor<Scalar> total;
  bool first = true;
  for (const auto& g : part.groups) {
    Tensor<Scalar> p = group_penalty(gather_group(w, g));
    per_group.push_back(static_cast<double>(p.value()));
    total = first ? p : add(total, p);
    first = false;
  }
  return {total, std::move(per_group)};
}

/// Whole-layer penalty: the single-group case.
template <typename Scalar>
Tensor<Scalar> so_penalty(const Tensor<Scalar>& w) {
  if (w.rank() != 2)
    throw ShapeError("so_penalty expects a rank-2 weight, got " + shape_str(w.shape()));
  return group_penalty(w);
}

namespace detail {

inline int reg_thread_budget() {
  if (const char* env = std::getenv("GOR_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

}  // namespace detail

/// Tape-free penalty evaluation with the closed-form gradient. Groups touch
/// disjoint columns, so they can be processed by a thread pool; per-group
/// numbers are reduced in partition order afterwards, which keeps the result
/// bit-identical to the sequential pass.
struct DirectPenalty {
  double sum = 0;
  std::vector<double> groups;
};

template <typename Scalar>
DirectPenalty layer_penalty_direct(
    const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>&
        w,
    const GroupPartition& part,
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>* grad = nullptr,
    int threads = 1) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (part.c_out != w.cols())
    throw ShapeError("layer_penalty_direct: partition covers " + std::to_string(part.c_out) +
                     " columns but weight has " + std::to_string(w.cols()));
  if (grad) grad->setZero(w.rows(), w.cols());
  const std::size_t ng = part.groups.size();
  DirectPenalty out;
  out.groups.assign(ng, 0.0);

  auto eval_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& idx = part.groups[i];
      const Index g = static_cast<Index>(idx.size());
      Mat wg(w.rows(), g);
      for (Index j = 0; j < g; ++j) wg.col(j) = w.col(idx[static_cast<std::size_t>(j)]);
      Mat dev = wg.transpose() * wg;
      dev.diagonal().array() -= Scalar(1);
      out.groups[i] = static_cast<double>(dev.squaredNorm());
      if (grad) {
        Mat gg = Scalar(4) * (wg * dev);
        for (Index j = 0; j < g; ++j) grad->col(idx[static_cast<std::size_t>(j)]) += gg.col(j);
      }
    }
  };

  const int nt = std::max(1, std::min<int>(threads, static_cast<int>(ng)));
  if (nt <= 1) {
    eval_range(0, ng);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(nt));
    const std::size_t chunk = (ng + static_cast<std::size_t>(nt) - 1) / static_cast<std::size_t>(nt);
    for (int t = 0; t < nt; ++t) {
      const std::size_t lo = static_cast<std::size_t>(t) * chunk;
      const std::size_t hi = std::min(ng, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(eval_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  for (double v : out.groups) out.sum += v;
  return out;
}

/// Min/max eigenvalue of each group's Gram matrix; substantiates the rank
/// bound (a group wider than C_in must have zero eigenvalues).
struct GramEigSummary {
  std::vector<double> min_eig;
  std::vector<double> max_eig;
};

template <typename Scalar>
GramEigSummary gram_eig_summary(
    const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>&
        w,
    const GroupPartition& part) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  GramEigSummary out;
  for (const auto& idx : part.groups) {
    const Index g = static_cast<Index>(idx.size());
    Mat wg(w.rows(), g);
    for (Index j = 0; j < g; ++j) wg.col(j) = w.col(idx[static_cast<std::size_t>(j)]);
    Mat gram = wg.transpose() * wg;
    Eigen::SelfAdjointEigenSolver<Mat> es(gram);
    out.min_eig.push_back(static_cast<double>(es.eigenvalues().minCoeff()));
    out.max_eig.push_back(static_cast<double>(es.eigenvalues().maxCoeff()));
  }
  return out;
}

}  // namespace gor
