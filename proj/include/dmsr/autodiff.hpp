#pragma once

#include "dmsr/tensor.hpp"

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dmsr {

enum class OpKind {
  leaf,
  add,
  sub,
  mul,
  div,
  neg,
  tanh,
  sigmoid,
  sqrt,
  square,
  abs,
  scale,
  add_scalar,
  gelu,
  softmax,
  matmul,
  sum,
  sum_axis,
  reshape,
  gather,
  layer_norm,
  conv2d,
  bilinear_sample,
  joint_filter,
  centre_taps,
};

const char* op_name(OpKind kind);

/// Elementwise nonlinear activations. Multiplication-only networks must not
/// record any of these.
bool is_activation(OpKind kind);

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  Index dim(Index axis) const { return value().dim(axis); }
  int id() const { return id_; }
  Tape<Scalar>* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

/// Records executed operations in topological order and runs reverse-mode
/// accumulation over them. Single owner; not thread-safe.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<Scalar>& grad_out)>;

  struct Node {
    OpKind kind = OpKind::leaf;
    int scope = 0;
    std::vector<int> inputs;
    Tensor<Scalar> value;
    bool requires_grad = false;
    BackwardFn backward;
    std::optional<Tensor<Scalar>> grad;  // persistent, leaves only
  };

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(Tensor<Scalar> value, bool requires_grad);
  Var<Scalar> constant(Tensor<Scalar> value) { return leaf(std::move(value), false); }

  /// Append an op node. `backward` receives d(loss)/d(output) and must call
  /// accumulate() for every input that requires a gradient.
  Var<Scalar> record(OpKind kind, std::vector<int> inputs, Tensor<Scalar> value, BackwardFn backward);

  const Tensor<Scalar>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  int size() const { return static_cast<int>(nodes_.size()); }

  void accumulate(int id, const Tensor<Scalar>& grad);
  void accumulate(int id, Tensor<Scalar>&& grad);

  /// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls
  /// until zero_grad().
  void backward(Var<Scalar> loss);
  void zero_grad();

  bool has_grad(Var<Scalar> v) const;
  /// Accumulated gradient of a leaf, zeros if nothing reached it.
  Tensor<Scalar> grad(Var<Scalar> v) const;

  // Named scopes for instrumentation: every recorded node carries the scope
  // path active when it was created.
  void push_scope(const std::string& name);
  void pop_scope();
  const std::string& scope_path(int scope) const { return scope_paths_[static_cast<std::size_t>(scope)]; }
  /// How many times a scope with this full path was entered.
  int scope_entries(const std::string& path) const;

 private:
  std::deque<Node> nodes_;
  std::vector<std::optional<Tensor<Scalar>>> pending_;
  bool in_backward_ = false;

  std::vector<std::string> scope_paths_;
  std::map<std::string, int> scope_ids_;
  std::map<std::string, int> scope_entries_;
  std::vector<int> scope_stack_;
};

template <typename Scalar>
class ScopeGuard {
 public:
  ScopeGuard(Tape<Scalar>& tape, const std::string& name) : tape_(tape) { tape_.push_scope(name); }
  ~ScopeGuard() { tape_.pop_scope(); }
  ScopeGuard(const ScopeGuard&) = delete;
  ScopeGuard& operator=(const ScopeGuard&) = delete;

 private:
  Tape<Scalar>& tape_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Binary elementwise ops broadcast.

enum class Elementwise { add, sub, mul, div, neg, tanh, sigmoid, sqrt, square };
enum class GeluMode { exact, tanh_approx };

template <typename S> Var<S> add(Var<S> a, Var<S> b);
template <typename S> Var<S> sub(Var<S> a, Var<S> b);
template <typename S> Var<S> mul(Var<S> a, Var<S> b);
/// Throws std::domain_error if any divisor element is zero.
template <typename S> Var<S> div(Var<S> a, Var<S> b);
template <typename S> Var<S> neg(Var<S> a);
template <typename S> Var<S> tanh(Var<S> a);
template <typename S> Var<S> sigmoid(Var<S> a);
template <typename S> Var<S> sqrt(Var<S> a);
template <typename S> Var<S> square(Var<S> a);
/// Subgradient 0 at the origin.
template <typename S> Var<S> abs(Var<S> a);
template <typename S> Var<S> scale(Var<S> a, S factor);
template <typename S> Var<S> add_scalar(Var<S> a, S value);

template <typename S>
Var<S> elementwise(Elementwise op, Var<S> a, std::optional<Var<S>> b = std::nullopt);

template <typename S> Var<S> gelu(Var<S> x, GeluMode mode = GeluMode::exact);

/// Numerically stable softmax over the last axis.
template <typename S> Var<S> softmax(Var<S> x);

/// [..,m,p] x [..,p,n]. A rank-2 right operand is shared across the batch.
template <typename S> Var<S> matmul(Var<S> a, Var<S> b);

template <typename S> Var<S> sum(Var<S> x);
template <typename S> Var<S> mean(Var<S> x);
template <typename S> Var<S> sum_axis(Var<S> x, Index axis, bool keepdim = true);
template <typename S> Var<S> mean_axis(Var<S> x, Index axis, bool keepdim = true);

template <typename S> Var<S> reshape(Var<S> x, Shape shape);
/// out[i] = x[index[i]]; the gradient scatter-adds.
template <typename S>
Var<S> gather(Var<S> x, Shape out_shape, std::shared_ptr<const std::vector<Index>> index);
template <typename S> Var<S> permute(Var<S> x, const std::vector<Index>& axes);
template <typename S> Var<S> slice(Var<S> x, Index axis, Index start, Index length);

template <typename S> Var<S> operator+(Var<S> a, Var<S> b) { return add(a, b); }
template <typename S> Var<S> operator-(Var<S> a, Var<S> b) { return sub(a, b); }
template <typename S> Var<S> operator*(Var<S> a, Var<S> b) { return mul(a, b); }
template <typename S> Var<S> operator/(Var<S> a, Var<S> b) { return div(a, b); }
template <typename S> Var<S> operator-(Var<S> a) { return neg(a); }
template <typename S> Var<S> operator*(Var<S> a, S factor) { return scale(a, factor); }
template <typename S> Var<S> operator*(S factor, Var<S> a) { return scale(a, factor); }

/// Standard normal CDF via erf.
double normal_cdf(double x);

}  // namespace dmsr
