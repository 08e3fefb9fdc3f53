#include "gor/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <random>

#include "gor/layers.hpp"
#include "gor/nn.hpp"
#include "gor/objective.hpp"
#include "gor/regularizer.hpp"

namespace gor {

namespace {

using LossFn = std::function<TensorXd(TensorXd&)>;

struct Harness {
  double eps;
  double tol;
  std::string corrupt;
  std::mt19937_64 rng{20240915};
  std::vector<GradCheck> checks;

  TensorXd random(Shape shape, bool away_from_zero = false) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    TensorXd t = TensorXd::zeros(std::move(shape));
    for (Index i = 0; i < t.numel(); ++i) {
      double v = dist(rng);
      if (away_from_zero && std::abs(v) < 0.1) v += v >= 0 ? 0.15 : -0.15;
      t.mutable_flat()[i] = v;
    }
    return t;
  }

  // One named check: analytic gradient of fn's scalar output w.r.t. every
  // element of the leaf, vs central differences.
  void run(const std::string& name, const TensorXd& w0, const LossFn& fn) {
    TensorXd::Flat analytic;
    {
      TapeXd tape;
      TensorXd w = TensorXd::from_flat(w0.shape(), w0.flat());
      tape.watch(w);
      TensorXd loss = fn(w);
      tape.backward(loss);
      analytic = w.grad();
    }
    if (!corrupt.empty() && name.rfind(corrupt, 0) == 0) analytic[0] += 0.5;
    auto eval = [&](Index i, double delta) {
      TensorXd w = TensorXd::from_flat(w0.shape(), w0.flat());
      w.mutable_flat()[i] += delta;
      return fn(w).value();
    };
    double worst = 0;
    for (Index i = 0; i < w0.numel(); ++i) {
      const double num = (eval(i, eps) - eval(i, -eps)) / (2 * eps);
      const double a = analytic[i];
      const double rel = std::abs(a - num) / std::max({1.0, std::abs(a), std::abs(num)});
      worst = std::max(worst, rel);
    }
    checks.push_back({name, worst, worst < tol});
  }

  void boolean(const std::string& name, bool ok) {
    checks.push_back({name, ok ? 0.0 : 1.0, ok});
  }
};

}  // namespace

GradCheckReport run_gradcheck(double eps, double tol, const std::string& corrupt) {
  Harness h{eps, tol, corrupt};

  TensorXd b34 = h.random({3, 4});
  TensorXd b43 = h.random({4, 3});
  h.run("matmul", h.random({4, 3}), [&](TensorXd& w) { return frobenius_sq(matmul(w, b34)); });
  h.run("transpose", h.random({3, 5}),
        [&](TensorXd& w) { return frobenius_sq(matmul(transpose(w), b34)); });
  h.run("reshape", h.random({2, 6}),
        [&](TensorXd& w) { return frobenius_sq(matmul(reshape(w, {4, 3}), b34)); });
  h.run("add", h.random({4, 3}), [&](TensorXd& w) { return frobenius_sq(add(w, b43)); });
  h.run("sub", h.random({4, 3}), [&](TensorXd& w) { return frobenius_sq(sub(b43, w)); });
  h.run("mul", h.random({4, 3}), [&](TensorXd& w) { return frobenius_sq(mul(w, b43)); });
  h.run("scalar_mul", h.random({4, 3}),
        [&](TensorXd& w) { return frobenius_sq(scalar_mul(w, -1.7)); });
  h.run("relu", h.random({4, 5}, true), [&](TensorXd& w) { return sum(relu(w)); });
  h.run("sub_identity", h.random({4, 4}),
        [&](TensorXd& w) { return frobenius_sq(sub_identity(w)); });
  h.run("frobenius_sq", h.random({3, 4}), [&](TensorXd& w) {
    return scalar_mul(frobenius_sq(w), 0.5);
  });
  h.run("sum", h.random({3, 4}), [&](TensorXd& w) { return mul(sum(w), sum(w)); });
  h.run("gather_cols", h.random({3, 6}),
        [&](TensorXd& w) { return frobenius_sq(gather_cols(w, {4, 0, 2})); });
  TensorXd bias_in = h.random({3, 5});
  h.run("add_rowvec", h.random({5}),
        [&](TensorXd& w) { return frobenius_sq(add_rowvec(bias_in, w)); });

  h.run("im2col", h.random({2, 3, 4, 4}),
        [&](TensorXd& w) { return frobenius_sq(im2col(w, 3, 3, 1)); });
  TensorXd conv_x = h.random({2, 4, 5, 5});
  TensorXd conv_k = h.random({6, 4, 3, 3});
  h.run("conv2d-kernel", conv_k, [&](TensorXd& w) {
    return frobenius_sq(reshape(conv2d(conv_x, w, 1), {2 * 6, 25}));
  });
  h.run("conv2d-input", conv_x, [&](TensorXd& w) {
    return frobenius_sq(reshape(conv2d(w, conv_k, 1), {2 * 6, 25}));
  });

  TensorXd gn_x = h.random({2, 4, 3, 3});
  TensorXd gamma = h.random({4});
  TensorXd beta = h.random({4});
  h.run("group_norm-x", gn_x, [&](TensorXd& w) {
    return frobenius_sq(reshape(group_norm(w, Index(2), gamma, beta), {2, 36}));
  });
  h.run("group_norm-gamma", gamma, [&](TensorXd& w) {
    return frobenius_sq(reshape(group_norm(gn_x, Index(2), w, beta), {2, 36}));
  });
  h.run("group_norm-beta", beta, [&](TensorXd& w) {
    return frobenius_sq(reshape(group_norm(gn_x, Index(2), gamma, w), {2, 36}));
  });
  h.run("global_avg_pool", h.random({2, 3, 4, 4}),
        [&](TensorXd& w) { return frobenius_sq(global_avg_pool(w)); });
  std::vector<int> labels = {2, 0, 3};
  h.run("softmax_cross_entropy", h.random({3, 4}),
        [&](TensorXd& w) { return softmax_cross_entropy(w, labels); });

  for (Index n : {Index(1), Index(2), Index(4)}) {
    GroupPartition part = make_partition(PartitionMode::inter, n, 8);
    h.run("group_penalty-n" + std::to_string(n), h.random({6, 8}),
          [&](TensorXd& w) { return layer_penalty(w, part).first; });
  }
  GroupPartition intra = make_partition(PartitionMode::intra, 2, 8);
  h.run("group_penalty-intra", h.random({6, 8}),
        [&](TensorXd& w) { return layer_penalty(w, intra).first; });

  // Adapter: x -> base(x) + scale*up(down(x)), gradients via the up and down
  // factors; base must stay out of the tape entirely.
  TensorXd ax = h.random({3, 5});
  TensorXd abase = h.random({6, 5});
  TensorXd adown = h.random({2, 5});
  TensorXd aup = h.random({6, 2});
  auto adapter_out = [&](const TensorXd& base, const TensorXd& down, const TensorXd& up) {
    return add(matmul(ax, transpose(base)),
               scalar_mul(matmul(matmul(ax, transpose(down)), transpose(up)), 0.7));
  };
  h.run("adapter-up", aup,
        [&](TensorXd& w) { return frobenius_sq(adapter_out(abase, adown, w)); });
  h.run("adapter-down", adown,
        [&](TensorXd& w) { return frobenius_sq(adapter_out(abase, w, aup)); });
  {
    TapeXd tape;
    TensorXd up = TensorXd::from_flat(aup.shape(), aup.flat());
    TensorXd down = TensorXd::from_flat(adown.shape(), adown.flat());
    TensorXd base = TensorXd::from_flat(abase.shape(), abase.flat());
    tape.watch(up);
    tape.watch(down);
    tape.backward(frobenius_sq(adapter_out(base, down, up)));
    h.boolean("adapter-base-grad-absent", !base.has_grad() && up.has_grad() && down.has_grad());
  }

  // Whole-model path: loss of the small conv net w.r.t. its first kernel.
  {
    Model model = build_model("conv-gn-small", 2, 5, 99);
    TensorXd x = h.random({2, 3, 5, 5});
    std::vector<int> y = {0, 1};
    TensorXd k0 = model.param("conv1.kernel");
    h.run("model-conv-gn", h.random(k0.shape()), [&](TensorXd& w) {
      model.params["conv1.kernel"] = w;
      return softmax_cross_entropy(forward(model, x), y);
    });
  }

  GradCheckReport report;
  report.checks = std::move(h.checks);
  report.pass = true;
  for (const auto& c : report.checks) {
    report.pass = report.pass && c.pass;
    if (c.rel_err >= report.worst) {
      report.worst = c.rel_err;
      report.worst_name = c.name;
    }
  }
  return report;
}

}  // namespace gor
