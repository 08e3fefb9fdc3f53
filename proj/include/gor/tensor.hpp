#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gor {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct TapeError : std::logic_error {
  using std::logic_error::logic_error;
};
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Multiply-accumulate counter hooked into the matmul path. Off by default;
// benchmarks switch it on around an instrumented forward pass.
namespace macs {
inline thread_local bool g_enabled = false;
inline thread_local long long g_count = 0;

inline void enable(bool on) { g_enabled = on; }
inline bool enabled() { return g_enabled; }
inline void reset() { g_count = 0; }
inline void add(long long n) { g_count += n; }
inline long long count() { return g_count; }

struct ScopedCount {
  ScopedCount() {
    reset();
    enable(true);
  }
  ~ScopedCount() { enable(false); }
};
}  // namespace macs

template <typename Scalar>
class Tape;

namespace detail {

template <typename Scalar>
struct TensorNode {
  Shape shape;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> value;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = false;  // watched directly; grads survive across backward calls
  Tape<Scalar>* tape = nullptr;
};

}  // namespace detail

/// Dense n-dimensional tensor with flat row-major storage. Copies are shallow
/// handles onto a shared node. Values are immutable once built except through
/// mutable_flat(), which exists for parameter updates between tape passes.
template <typename Scalar>
class Tensor {
 public:
  using Flat = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<MatRM>;
  using ConstMatMap = Eigen::Map<const MatRM>;
  using Node = detail::TensorNode<Scalar>;
  using NodePtr = std::shared_ptr<Node>;

  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t = alloc(std::move(shape));
    t.n_->value.setZero();
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), Scalar(1)); }

  static Tensor full(Shape shape, Scalar v) {
    Tensor t = alloc(std::move(shape));
    t.n_->value.setConstant(v);
    return t;
  }

  static Tensor scalar(Scalar v) { return full({1}, v); }

  static Tensor from(Shape shape, std::vector<Scalar> data) {
    Tensor t = alloc(std::move(shape));
    if (static_cast<Index>(data.size()) != t.numel())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(t.shape()));
    for (Index i = 0; i < t.numel(); ++i) t.n_->value[i] = data[static_cast<std::size_t>(i)];
    return t;
  }

  static Tensor from_flat(Shape shape, Flat data) {
    Tensor t = alloc(std::move(shape));
    if (data.size() != t.numel())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(t.shape()));
    t.n_->value = std::move(data);
    return t;
  }

  /// Row-major rank-2 tensor from nested braces, e.g. matrix({{1,2},{3,4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows) {
    const Index r = static_cast<Index>(rows.size());
    const Index c = r ? static_cast<Index>(rows.begin()->size()) : 0;
    Tensor t = alloc({r, c});
    Index i = 0;
    for (const auto& row : rows) {
      if (static_cast<Index>(row.size()) != c) throw ShapeError("ragged matrix literal");
      for (Scalar v : row) t.n_->value[i++] = v;
    }
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  Index dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  Index numel() const { return n_->value.size(); }
  bool is_scalar() const { return numel() == 1; }

  const Flat& flat() const { return n_->value; }
  Flat& mutable_flat() { return n_->value; }

  Scalar value() const {
    if (!is_scalar())
      throw ShapeError("value() requires a scalar tensor, got shape " + shape_str(shape()));
    return n_->value[0];
  }

  Scalar operator()(Index i, Index j) const { return mat()(i, j); }

  ConstMatMap mat() const {
    if (rank() != 2)
      throw ShapeError("matrix view requires a rank-2 tensor, got shape " + shape_str(shape()));
    return ConstMatMap(n_->value.data(), dim(0), dim(1));
  }

  MatMap mutable_mat() {
    if (rank() != 2)
      throw ShapeError("matrix view requires a rank-2 tensor, got shape " + shape_str(shape()));
    return MatMap(n_->value.data(), dim(0), dim(1));
  }

  bool requires_grad() const { return n_->requires_grad; }
  bool has_grad() const { return n_->grad.size() > 0; }

  /// Accumulated gradient; zeros if backward never reached this tensor.
  Flat grad() const {
    if (!has_grad()) return Flat::Zero(numel());
    return n_->grad;
  }

  ConstMatMap grad_mat() const {
    if (rank() != 2 || !has_grad())
      throw ShapeError("grad_mat requires a rank-2 tensor with an accumulated gradient");
    return ConstMatMap(n_->grad.data(), dim(0), dim(1));
  }

  void zero_grad() { n_->grad.resize(0); }

  const NodePtr& node() const { return n_; }

  Tape<Scalar>* tape() const { return n_->tape; }

 private:
  static Tensor alloc(Shape shape) {
    for (Index d : shape)
      if (d <= 0)
        throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->value.resize(shape_numel(t.n_->shape));
    return t;
  }

  template <typename S>
  friend Tensor<S> make_result(Shape, std::initializer_list<Tensor<S>>);

  NodePtr n_;
};

/// Ordered record of executed operations. Each differentiable op appends one
/// entry; backward() seeds the loss adjoint and replays entries in reverse,
/// visiting each exactly once. Repeated backward calls accumulate gradients.
/// A tape and the tensors bound to it belong to one thread of execution.
template <typename Scalar>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() { release(); }

  /// Mark a leaf tensor as differentiable on this tape.
  void watch(Tensor<Scalar>& t) {
    auto& node = *t.node();
    if (node.tape == this) return;
    if (node.tape != nullptr)
      throw TapeError("tensor is already attached to a different tape");
    node.tape = this;
    node.requires_grad = true;
    node.leaf = true;
    bound_.push_back(t.node());
  }

  /// Create a watched leaf initialized from flat data.
  Tensor<Scalar> var(Shape shape, typename Tensor<Scalar>::Flat data) {
    Tensor<Scalar> t = Tensor<Scalar>::from_flat(std::move(shape), std::move(data));
    watch(t);
    return t;
  }

  void record(std::function<void()> pull) { ops_.push_back(std::move(pull)); }

  void track(const typename Tensor<Scalar>::NodePtr& n) { bound_.push_back(n); }

  /// Seed d(loss)/d(loss) = 1 and replay all recorded operations in reverse.
  /// Intermediate adjoints are scratch and reset per pass; leaf gradients
  /// accumulate across calls until zero_grad.
  void backward(const Tensor<Scalar>& loss) {
    if (!loss.is_scalar())
      throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (loss.node()->tape != this)
      throw TapeError("loss tensor is not attached to this tape");
    for (auto& w : bound_) {
      if (auto n = w.lock()) {
        if (!n->leaf) n->grad.resize(0);
      }
    }
    auto& node = *loss.node();
    if (node.grad.size() == 0) node.grad = Tensor<Scalar>::Flat::Zero(1);
    node.grad[0] += Scalar(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  std::size_t op_count() const { return ops_.size(); }

  /// Drop recorded operations and detach every bound tensor.
  void release() {
    ops_.clear();
    for (auto& w : bound_) {
      if (auto n = w.lock()) {
        n->tape = nullptr;
        n->requires_grad = false;
        n->leaf = false;
      }
    }
    bound_.clear();
  }

 private:
  std::vector<std::function<void()>> ops_;
  std::vector<std::weak_ptr<detail::TensorNode<Scalar>>> bound_;
};

/// Backward through the tape the loss is recorded on.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (!loss.is_scalar())
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  Tape<Scalar>* tape = loss.node()->tape;
  if (tape == nullptr) throw TapeError("loss tensor is not attached to a tape");
  tape->backward(loss);
}

/// Allocate the output of an op: binds it to the (unique) tape of the inputs
/// and propagates requires_grad.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, std::initializer_list<Tensor<Scalar>> inputs) {
  Tensor<Scalar> out = Tensor<Scalar>::alloc(std::move(shape));
  Tape<Scalar>* tape = nullptr;
  bool rg = false;
  for (const auto& in : inputs) {
    Tape<Scalar>* t = in.node()->tape;
    if (t != nullptr) {
      if (tape != nullptr && tape != t)
        throw TapeError("operation mixes tensors from two different tapes");
      tape = t;
    }
    rg = rg || in.requires_grad();
  }
  out.node()->tape = tape;
  out.node()->requires_grad = rg && tape != nullptr;
  if (tape != nullptr) tape->track(out.node());
  return out;
}

namespace detail {

/// Accumulate an adjoint expression into a node's gradient buffer.
template <typename Scalar, typename Expr>
void accum_grad(const std::shared_ptr<TensorNode<Scalar>>& n, const Expr& e) {
  if (!n->requires_grad) return;
  if (n->grad.size() == 0) n->grad = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(n->value.size());
  n->grad += e;
}

/// Output adjoint, or nullptr when backward never reached the output.
template <typename Scalar>
const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>* out_grad(
    const std::shared_ptr<TensorNode<Scalar>>& n) {
  return n->grad.size() > 0 ? &n->grad : nullptr;
}

}  // namespace detail

using TensorXd = Tensor<double>;
using TapeXd = Tape<double>;

}  // namespace gor
