#pragma once

#include <string>
#include <vector>

#include "gor/ops.hpp"
#include "gor/tensor.hpp"

namespace gor {

enum class PartitionMode { inter, intra };

inline const char* to_string(PartitionMode m) {
  return m == PartitionMode::inter ? "inter" : "intra";
}

inline PartitionMode parse_partition_mode(const std::string& s) {
  if (s == "inter") return PartitionMode::inter;
  if (s == "intra") return PartitionMode::intra;
  throw ConfigError("unknown partition mode '" + s + "' (expected inter|intra)");
}

/// Assignment of the C_out filter columns of one layer to regularization
/// groups. `n` is the group-count parameter: inter mode yields n blocks of
/// c_out/n consecutive columns, intra mode yields c_out/n groups of n columns
/// strided c_out/n apart, so every group draws one column per block.
struct GroupPartition {
  Index c_out = 0;
  Index n = 1;
  PartitionMode mode = PartitionMode::inter;
  std::vector<std::vector<Index>> groups;
};

/// Largest divisor of c_out that is <= min(requested_n, c_out/4), clamped to
/// at least 1. Keeps every group at least 4 columns wide where possible.
inline Index effective_groups(Index requested_n, Index c_out) {
  if (requested_n < 1 || c_out < 1)
    throw ConfigError("effective_groups: requested_n and c_out must be >= 1");
  Index cap = std::min(requested_n, c_out / 4);
  if (cap < 1) cap = 1;
  for (Index d = cap; d > 1; --d)
    if (c_out % d == 0) return d;
  return 1;
}

inline GroupPartition make_partition(PartitionMode mode, Index n, Index c_out) {
  if (n < 1 || c_out < 1 || c_out % n != 0)
    throw ConfigError("make_partition: n=" + std::to_string(n) +
                      " must divide c_out=" + std::to_string(c_out));
  const Index g = c_out / n;
  GroupPartition p;
  p.c_out = c_out;
  p.n = n;
  p.mode = mode;
  if (mode == PartitionMode::inter) {
    p.groups.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      auto& grp = p.groups[static_cast<std::size_t>(i)];
      grp.resize(static_cast<std::size_t>(g));
      for (Index j = 0; j < g; ++j) grp[static_cast<std::size_t>(j)] = i * g + j;
    }
  } else {
    p.groups.resize(static_cast<std::size_t>(g));
    for (Index i = 0; i < g; ++i) {
      auto& grp = p.groups[static_cast<std::size_t>(i)];
      grp.resize(static_cast<std::size_t>(n));
      for (Index j = 0; j < n; ++j) grp[static_cast<std::size_t>(j)] = j * g + i;
    }
  }
  return p;
}

/// [C_out,c,h,w] kernel -> [c*h*w, C_out] matrix whose column j is filter j
/// flattened. Tape-participating, so penalty gradients reach the 4-D kernel.
template <typename Scalar>
Tensor<Scalar> flatten_kernel(const Tensor<Scalar>& kernel) {
  if (kernel.rank() != 4)
    throw ShapeError("flatten_kernel expects [C_out,c,h,w], got " + shape_str(kernel.shape()));
  const Index co = kernel.dim(0);
  const Index cin = kernel.dim(1) * kernel.dim(2) * kernel.dim(3);
  return transpose(reshape(kernel, {co, cin}));
}

/// Inverse of flatten_kernel for a known filter geometry.
template <typename Scalar>
Tensor<Scalar> unflatten_kernel(const Tensor<Scalar>& flat, Index c, Index h, Index w) {
  if (flat.rank() != 2 || flat.dim(0) != c * h * w)
    throw ShapeError("unflatten_kernel: flat shape " + shape_str(flat.shape()) +
                     " does not match c*h*w=" + std::to_string(c * h * w));
  return reshape(transpose(flat), {flat.dim(1), c, h, w});
}

/// Column gather of one regularization group out of the flattened weight
/// matrix; gradients scatter back into the gathered columns only.
template <typename Scalar>
Tensor<Scalar> gather_group(const Tensor<Scalar>& w, const std::vector<Index>& indices) {
  return gather_cols(w, indices);
}

}  // namespace gor
