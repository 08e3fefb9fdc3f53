#pragma once

#include <algorithm>
#include <vector>

#include "gor/tensor.hpp"

namespace gor {

namespace detail {

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace detail

/// C = A * B for rank-2 tensors. Backward: dA += dC * B^T, dB += A^T * dC.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<Scalar> out = make_result<Scalar>({m, n}, {a, b});
  out.mutable_mat().noalias() = a.mat() * b.mat();
  if (macs::enabled()) macs::add(static_cast<long long>(m) * k * n);
  if (out.requires_grad()) {
    out.tape()->record([an = a.node(), bn = b.node(), on = out.node(), m, k, n] {
      const auto* g = detail::out_grad(on);
      if (!g) return;
      typename Tensor<Scalar>::ConstMatMap dC(g->data(), m, n);
      typename Tensor<Scalar>::ConstMatMap A(an->value.data(), m, k);
      typename Tensor<Scalar>::ConstMatMap B(bn->value.data(), k, n);
      if (an->requires_grad) {
        typename Tensor<Scalar>::MatRM dA = dC * B.transpose();
        detail::accum_grad(an, typename Tensor<Scalar>::ConstMatMap(dA.data(), m * k, 1));
        if (macs::enabled()) macs::add(static_cast<long long>(m) * n * k);
      }
      if (bn->requires_grad) {
        typename Tensor<Scalar>::MatRM dB = A.transpose() * dC;
        detail::accum_grad(bn, typename Tensor<Scalar>::ConstMatMap(dB.data(), k * n, 1));
        if (macs::enabled()) macs::add(static_cast<long long>(m) * n * k);
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  if (a.rank() != 2)
    throw ShapeError("transpose requires a rank-2 tensor, got shape " + shape_str(a.shape()));
  const Index r = a.dim(0), c = a.dim(1);
  Tensor<Scalar> out = make_result<Scalar>({c, r}, {a});
  out.mutable_mat() = a.mat().transpose();
  if (out.requires_grad()) {
    out.tape()->record([an = a.node(), on = out.node(), r, c] {
      const auto* g = detail::out_grad(on);
      if (!g) return;
      typename Tensor<Scalar>::ConstMatMap dOut(g->data(), c, r);
      typename Tensor<Scalar>::MatRM dA = dOut.transpose();
      detail::accum_grad(an, typename Tensor<Scalar>::ConstMatMap(dA.data(), r * c, 1));
    });
  }
  return out;
}

/// Same flat data under a new shape; gradients flow back untouched.
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Tensor<Scalar> out = make_result<Scalar>(std::move(shape), {a});
  out.mutable_flat() = a.flat();
  if (out.requires_grad()) {
    out.tape()->record([an = a.node(), on = out.node()] {
      const auto* g = detail::out_grad(on);
      if (!g) return;
      detail::accum_grad(an, *g);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<Scalar> out = make_result<Scalar>(a.shape(), {a, b});
  out.mutable_flat() = a.flat() + b.flat();
  if (out.requires_grad()) {
    out.tape()->record([an = a.node(), bn = b.node(), on = out.node()] {
      const auto* g = detail::out_grad(on);
      if (!g) return;
      detail::accum_grad(an, *g);
      detail::accum_grad(bn, *g);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<Scalar> out = make_result<Scalar>(a.shape(), {a, b});
  out.mutable_flat() = a.flat() - b.flat();
  if (out.requires_grad()) {
    out.tape()->record([an = a.node(), bn = b.node(), on = out.node()] {
      const auto* g = detail::out_grad(on);
      if (!g) return;
      detail::accum_grad(an, *g);
      detail::accum_grad(bn, -*g);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<Scalar> out = make_result<Scalar>(a.shape(), {a, b});
  out.mutable_flat() = a.flat().cwiseProduct(b.flat());
  if (out.requires_grad()) {
    out.tape()->record([an = a.node(), bn = b.node(), on = out.node()] {
      const auto* g = detail::out_grad(on);
      if (!g) return;
      detail::accum_grad(an, g->cwiseProduct(bn->value));
      detail::accum_grad(bn, g->cwiseProduct(an->value));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> scalar_mul(const Tensor<Scalar>& a, Scalar c) {
  Tensor<Scalar> out = make_result<Scalar>(a.shape(), {a});
  out.mutable_flat() = a.flat() * c;
  if (out.requires_grad()) {
    out.tape()->record([an = a.node(), on = out.node(), c] {
      const auto* g = detail::out_grad(on);
      if (!g) return;
      detail::accum_grad(an, *g * c);
    });
  }
  return out;
}

/// Backward uses the 0/1 mask of the forward input.
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  Tensor<Scalar> out = make_result<Scalar>(a.shape(), {a});
  out.mutable_flat() = a.flat().cwiseMax(Scalar(0));
  if (out.requires_grad()) {
    out.tape()->record([an = a.node(), on = out.node()] {
      const auto* g = detail::out_grad(on);
      if (!g) return;
      auto mask = (an->value.array() > Scalar(0)).template cast<Scalar>();
      detail::accum_grad(an, (g->array() * mask).matrix());
    });
  }
  return out;
}

/// A - I for a square matrix; the adjoint passes through unchanged.
template <typename Scalar>
Tensor<Scalar> sub_identity(const Tensor<Scalar>& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1))
    throw ShapeError("sub_identity requires a square matrix, got shape " + shape_str(a.shape()));
  const Index n = a.dim(0);
  Tensor<Scalar> out = make_result<Scalar>(a.shape(), {a});
  out.mutable_flat() = a.flat();
  auto m = out.mutable_mat();
  m.diagonal().array() -= Scalar(1);
  if (out.requires_grad()) {
    out.tape()->record([an = a.node(), on = out.node(), n] {
      (void)n;
      const auto* g = detail::out_grad(on);
      if (!g) return;
      detail::accum_grad(an, *g);
    });
  }
  return out;
}

/// Sum of squared entries as a scalar tensor. Backward: dA += 2 * A * dLoss.
template <typename Scalar>
Tensor<Scalar> frobenius_sq(const Tensor<Scalar>& a) {
  if (a.numel() == 0) throw ShapeError("frobenius_sq of an empty tensor");
  Tensor<Scalar> out = make_result<Scalar>({1}, {a});
  out.mutable_flat()[0] = a.flat().squaredNorm();
  if (out.requires_grad()) {
    out.tape()->record([an = a.node(), on = out.node()] {
      const auto* g = detail::out_grad(on);
      if (!g) return;
      detail::accum_grad(an, an->value * (Scalar(2) * (*g)[0]));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Tensor<Scalar> out = make_result<Scalar>({1}, {a});
  out.mutable_flat()[0] = a.flat().sum();
  if (out.requires_grad()) {
    out.tape()->record([an = a.node(), on = out.node()] {
      const auto* g = detail::out_grad(on);
      if (!g) return;
      detail::accum_grad(
          an, Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Constant(an->value.size(), (*g)[0]));
    });
  }
  return out;
}

/// Column gather from a rank-2 tensor; the gradient scatters back into the
/// gathered columns only.
template <typename Scalar>
Tensor<Scalar> gather_cols(const Tensor<Scalar>& a, const std::vector<Index>& idx) {
  if (a.rank() != 2)
    throw ShapeError("gather_cols requires a rank-2 tensor, got shape " + shape_str(a.shape()));
  if (idx.empty()) throw ShapeError("gather_cols: empty index list");
  const Index r = a.dim(0), c = a.dim(1);
  for (Index j : idx)
    if (j < 0 || j >= c)
      throw ShapeError("gather_cols: column index " + std::to_string(j) +
                       " out of range for shape " + shape_str(a.shape()));
  const Index g = static_cast<Index>(idx.size());
  Tensor<Scalar> out = make_result<Scalar>({r, g}, {a});
  auto src = a.mat();
  auto dst = out.mutable_mat();
  for (Index j = 0; j < g; ++j) dst.col(j) = src.col(idx[static_cast<std::size_t>(j)]);
  if (out.requires_grad()) {
    out.tape()->record([an = a.node(), on = out.node(), idx, r, c, g] {
      const auto* gr = detail::out_grad(on);
      if (!gr || !an->requires_grad) return;
      if (an->grad.size() == 0)
        an->grad = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(an->value.size());
      typename Tensor<Scalar>::ConstMatMap dOut(gr->data(), r, g);
      typename Tensor<Scalar>::MatMap dA(an->grad.data(), r, c);
      for (Index j = 0; j < g; ++j) dA.col(idx[static_cast<std::size_t>(j)]) += dOut.col(j);
    });
  }
  return out;
}

/// Broadcast a length-c row vector over the rows of an r-by-c tensor.
template <typename Scalar>
Tensor<Scalar> add_rowvec(const Tensor<Scalar>& m, const Tensor<Scalar>& v) {
  if (m.rank() != 2 || v.rank() != 1 || v.dim(0) != m.dim(1))
    throw ShapeError("add_rowvec: shape mismatch " + shape_str(m.shape()) + " vs " +
                     shape_str(v.shape()));
  const Index r = m.dim(0), c = m.dim(1);
  Tensor<Scalar> out = make_result<Scalar>(m.shape(), {m, v});
  out.mutable_mat() = m.mat().rowwise() + v.flat().transpose();
  if (out.requires_grad()) {
    out.tape()->record([mn = m.node(), vn = v.node(), on = out.node(), r, c] {
      const auto* g = detail::out_grad(on);
      if (!g) return;
      detail::accum_grad(mn, *g);
      if (vn->requires_grad) {
        typename Tensor<Scalar>::ConstMatMap dOut(g->data(), r, c);
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dv = dOut.colwise().sum().transpose();
        detail::accum_grad(vn, dv);
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return add(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return sub(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator*(Scalar c, const Tensor<Scalar>& a) {
  return scalar_mul(a, c);
}
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, Scalar c) {
  return scalar_mul(a, c);
}

}  // namespace gor
