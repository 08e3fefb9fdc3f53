#pragma once

#include <cmath>
#include <vector>

#include "gor/ops.hpp"
#include "gor/tensor.hpp"

namespace gor {

namespace detail {

/// Gather a[src[i]] into a new tensor, with src[i] == -1 meaning a hard zero.
/// Backward scatter-adds the adjoint through the same table, so any op whose
/// forward is a static index map (im2col, layout permutations) gets an exact
/// gradient for free.
template <typename Scalar>
Tensor<Scalar> gather_table(const Tensor<Scalar>& a, Shape out_shape, std::vector<Index> src) {
  if (static_cast<Index>(src.size()) != shape_numel(out_shape))
    throw ShapeError("gather_table: index table does not match output shape");
  Tensor<Scalar> out = make_result<Scalar>(std::move(out_shape), {a});
  const Scalar* in = a.flat().data();
  Scalar* o = out.mutable_flat().data();
  const Index n = out.numel();
  for (Index i = 0; i < n; ++i) {
    const Index s = src[static_cast<std::size_t>(i)];
    o[i] = s < 0 ? Scalar(0) : in[s];
  }
  if (out.requires_grad()) {
    out.tape()->record([an = a.node(), on = out.node(), src = std::move(src)] {
      const auto* g = detail::out_grad(on);
      if (!g || !an->requires_grad) return;
      if (an->grad.size() == 0)
        an->grad = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(an->value.size());
      const Index n = g->size();
      for (Index i = 0; i < n; ++i) {
        const Index s = src[static_cast<std::size_t>(i)];
        if (s >= 0) an->grad[s] += (*g)[i];
      }
    });
  }
  return out;
}

}  // namespace detail

/// Unfold conv patches: [B,C,H,W] -> [B*H_out*W_out, C*kh*kw], zero padding.
/// Each output row is one spatial position with its receptive field flattened
/// channel-major.
template <typename Scalar>
Tensor<Scalar> im2col(const Tensor<Scalar>& x, Index kh, Index kw, Index pad, Index stride = 1) {
  if (x.rank() != 4)
    throw ShapeError("im2col expects [B,C,H,W], got shape " + shape_str(x.shape()));
  if (kh <= 0 || kw <= 0 || pad < 0 || stride <= 0) throw ShapeError("im2col: bad kernel/pad/stride");
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index ho = (H + 2 * pad - kh) / stride + 1, wo = (W + 2 * pad - kw) / stride + 1;
  if (H + 2 * pad - kh < 0 || W + 2 * pad - kw < 0)
    throw ShapeError("im2col: kernel larger than padded input, shape " + shape_str(x.shape()));
  const Index K = C * kh * kw;
  std::vector<Index> src(static_cast<std::size_t>(B * ho * wo * K));
  std::size_t p = 0;
  for (Index b = 0; b < B; ++b)
    for (Index oy = 0; oy < ho; ++oy)
      for (Index ox = 0; ox < wo; ++ox)
        for (Index c = 0; c < C; ++c)
          for (Index ky = 0; ky < kh; ++ky)
            for (Index kx = 0; kx < kw; ++kx) {
              const Index iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
              src[p++] = (iy < 0 || iy >= H || ix < 0 || ix >= W)
                             ? Index(-1)
                             : ((b * C + c) * H + iy) * W + ix;
            }
  return detail::gather_table(x, {B * ho * wo, K}, std::move(src));
}

/// 2D convolution. x: [B,C_in,H,W], kernel: [C_out,C_in,kh,kw].
/// Runs as im2col + one matmul + a layout permutation back to NCHW; all three
/// pieces carry their own backward.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, Index pad,
                      Index stride = 1) {
  if (x.rank() != 4 || kernel.rank() != 4 || kernel.dim(1) != x.dim(1))
    throw ShapeError("conv2d: incompatible shapes " + shape_str(x.shape()) + " vs " +
                     shape_str(kernel.shape()));
  const Index B = x.dim(0), co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  const Index K = kernel.dim(1) * kh * kw;
  const Index ho = (x.dim(2) + 2 * pad - kh) / stride + 1;
  const Index wo = (x.dim(3) + 2 * pad - kw) / stride + 1;
  Tensor<Scalar> cols = im2col(x, kh, kw, pad, stride);               // [B*ho*wo, K]
  Tensor<Scalar> kt = transpose(reshape(kernel, {co, K}));            // [K, co]
  Tensor<Scalar> rows = matmul(cols, kt);                             // [B*ho*wo, co]
  std::vector<Index> src(static_cast<std::size_t>(B * co * ho * wo));
  std::size_t p = 0;
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < co; ++c)
      for (Index s = 0; s < ho * wo; ++s) src[p++] = (b * ho * wo + s) * co + c;
  return detail::gather_table(rows, {B, co, ho, wo}, std::move(src));
}

/// Group normalization over [B,C,H,W] with per-channel affine. Statistics are
/// taken per (sample, channel group); backward is the closed form
///   dx = (dxh - mean(dxh) - xh * mean(dxh * xh)) / std
/// with dxh = dy * gamma, means over each normalization block.
template <typename Scalar>
Tensor<Scalar> group_norm(const Tensor<Scalar>& x, Index groups, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, Scalar eps = Scalar(1e-5)) {
  if (x.rank() != 4) throw ShapeError("group_norm expects [B,C,H,W], got " + shape_str(x.shape()));
  const Index B = x.dim(0), C = x.dim(1), spatial = x.dim(2) * x.dim(3);
  if (groups <= 0 || C % groups != 0)
    throw ShapeError("group_norm: groups=" + std::to_string(groups) +
                     " must divide channels=" + std::to_string(C));
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    throw ShapeError("group_norm: affine params must have shape [" + std::to_string(C) + "]");
  const Index cpg = C / groups, m = cpg * spatial;
  Tensor<Scalar> out = make_result<Scalar>(x.shape(), {x, gamma, beta});

  using Flat = typename Tensor<Scalar>::Flat;
  Flat xhat(x.numel());
  Flat inv_std(B * groups);
  const Scalar* xp = x.flat().data();
  Scalar* op = out.mutable_flat().data();
  const Scalar* gp = gamma.flat().data();
  const Scalar* bp = beta.flat().data();
  for (Index b = 0; b < B; ++b)
    for (Index g = 0; g < groups; ++g) {
      const Index base = (b * C + g * cpg) * spatial;
      Eigen::Map<const Flat> blk(xp + base, m);
      const Scalar mu = blk.mean();
      const Scalar var = (blk.array() - mu).square().mean();
      const Scalar is = Scalar(1) / std::sqrt(var + eps);
      inv_std[b * groups + g] = is;
      Eigen::Map<Flat>(xhat.data() + base, m) = (blk.array() - mu) * is;
      for (Index cc = 0; cc < cpg; ++cc) {
        const Index c = g * cpg + cc;
        const Index off = base + cc * spatial;
        Eigen::Map<Flat>(op + off, spatial) =
            Eigen::Map<const Flat>(xhat.data() + off, spatial).array() * gp[c] + bp[c];
      }
    }

  if (out.requires_grad()) {
    out.tape()->record([xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node(),
                        xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, groups, cpg,
                        spatial, m] {
      const auto* g = detail::out_grad(on);
      if (!g) return;
      const Scalar* dyp = g->data();
      const Scalar* gp = gn->value.data();
      if (gn->requires_grad || bn->requires_grad) {
        Flat dgamma = Flat::Zero(C), dbeta = Flat::Zero(C);
        for (Index b = 0; b < B; ++b)
          for (Index c = 0; c < C; ++c) {
            const Index off = (b * C + c) * spatial;
            Eigen::Map<const Flat> dy(dyp + off, spatial);
            Eigen::Map<const Flat> xh(xhat.data() + off, spatial);
            dgamma[c] += dy.dot(xh);
            dbeta[c] += dy.sum();
          }
        detail::accum_grad(gn, dgamma);
        detail::accum_grad(bn, dbeta);
      }
      if (xn->requires_grad) {
        Flat dx(xn->value.size());
        Flat dxh(m);
        for (Index b = 0; b < B; ++b)
          for (Index grp = 0; grp < groups; ++grp) {
            const Index base = (b * C + grp * cpg) * spatial;
            for (Index cc = 0; cc < cpg; ++cc) {
              const Index c = grp * cpg + cc;
              Eigen::Map<const Flat> dy(dyp + base + cc * spatial, spatial);
              Eigen::Map<Flat>(dxh.data() + cc * spatial, spatial) = dy * gp[c];
            }
            Eigen::Map<const Flat> xh(xhat.data() + base, m);
            const Scalar s1 = dxh.mean();
            const Scalar s2 = dxh.dot(xh) / Scalar(m);
            const Scalar is = inv_std[b * groups + grp];
            Eigen::Map<Flat>(dx.data() + base, m) =
                (dxh.array() - s1 - xh.array() * s2) * is;
          }
        detail::accum_grad(xn, dx);
      }
    });
  }
  return out;
}

/// Mean over spatial dims: [B,C,H,W] -> [B,C].
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
  if (x.rank() != 4)
    throw ShapeError("global_avg_pool expects [B,C,H,W], got " + shape_str(x.shape()));
  const Index B = x.dim(0), C = x.dim(1), spatial = x.dim(2) * x.dim(3);
  Tensor<Scalar> out = make_result<Scalar>({B, C}, {x});
  using Flat = typename Tensor<Scalar>::Flat;
  const Scalar* xp = x.flat().data();
  Scalar* op = out.mutable_flat().data();
  for (Index i = 0; i < B * C; ++i)
    op[i] = Eigen::Map<const Flat>(xp + i * spatial, spatial).mean();
  if (out.requires_grad()) {
    out.tape()->record([xn = x.node(), on = out.node(), B, C, spatial] {
      const auto* g = detail::out_grad(on);
      if (!g || !xn->requires_grad) return;
      Flat dx(xn->value.size());
      for (Index i = 0; i < B * C; ++i)
        Eigen::Map<Flat>(dx.data() + i * spatial, spatial).setConstant((*g)[i] / Scalar(spatial));
      detail::accum_grad(xn, dx);
    });
  }
  return out;
}

/// Mean cross-entropy over a batch of logits [B,K] against integer labels.
/// Fused with softmax; backward is (softmax - onehot) / B.
template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw ShapeError("softmax_cross_entropy expects [B,K] logits, got " +
                     shape_str(logits.shape()));
  const Index B = logits.dim(0), K = logits.dim(1);
  if (static_cast<Index>(labels.size()) != B)
    throw ShapeError("softmax_cross_entropy: batch " + std::to_string(B) + " vs " +
                     std::to_string(labels.size()) + " labels");
  for (int y : labels)
    if (y < 0 || y >= K) throw ShapeError("softmax_cross_entropy: label out of range");

  using MatRM = typename Tensor<Scalar>::MatRM;
  MatRM soft(B, K);
  Scalar total = 0;
  auto z = logits.mat();
  for (Index b = 0; b < B; ++b) {
    const Scalar mx = z.row(b).maxCoeff();
    soft.row(b) = (z.row(b).array() - mx).exp();
    const Scalar denom = soft.row(b).sum();
    soft.row(b) /= denom;
    total += std::log(denom) + mx - z(b, labels[static_cast<std::size_t>(b)]);
  }
  Tensor<Scalar> out = make_result<Scalar>({1}, {logits});
  out.mutable_flat()[0] = total / Scalar(B);
  if (out.requires_grad()) {
    out.tape()->record([ln = logits.node(), on = out.node(), soft = std::move(soft), labels, B,
                        K] {
      const auto* g = detail::out_grad(on);
      if (!g || !ln->requires_grad) return;
      MatRM d = soft;
      for (Index b = 0; b < B; ++b) d(b, labels[static_cast<std::size_t>(b)]) -= Scalar(1);
      d *= (*g)[0] / Scalar(B);
      detail::accum_grad(ln, typename Tensor<Scalar>::ConstMatMap(d.data(), B * K, 1));
    });
  }
  return out;
}

/// Row-wise argmax of a [B,K] tensor; ties break toward the lower index.
template <typename Scalar>
std::vector<int> argmax_rows(const Tensor<Scalar>& t) {
  if (t.rank() != 2) throw ShapeError("argmax_rows expects rank 2, got " + shape_str(t.shape()));
  std::vector<int> out(static_cast<std::size_t>(t.dim(0)));
  auto m = t.mat();
  for (Index b = 0; b < t.dim(0); ++b) {
    Index j = 0;
    m.row(b).maxCoeff(&j);
    out[static_cast<std::size_t>(b)] = static_cast<int>(j);
  }
  return out;
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& labels) {
  if (pred.size() != labels.size() || pred.empty()) throw ShapeError("accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace gor
