#include "dmsr/autodiff.hpp"

#include "dmsr/detail/broadcast.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dmsr {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::neg: return "neg";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::sqrt: return "sqrt";
    case OpKind::square: return "square";
    case OpKind::abs: return "abs";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::gelu: return "gelu";
    case OpKind::softmax: return "softmax";
    case OpKind::matmul: return "matmul";
    case OpKind::sum: return "sum";
    case OpKind::sum_axis: return "sum_axis";
    case OpKind::reshape: return "reshape";
    case OpKind::gather: return "gather";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::conv2d: return "conv2d";
    case OpKind::bilinear_sample: return "bilinear_sample";
    case OpKind::joint_filter: return "joint_filter";
    case OpKind::centre_taps: return "centre_taps";
  }
  return "unknown";
}

bool is_activation(OpKind kind) {
  return kind == OpKind::tanh || kind == OpKind::sigmoid || kind == OpKind::gelu || kind == OpKind::softmax;
}

double normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)); }

// ---------------------------------------------------------------------------
// Tape

template <typename S>
Tape<S>::Tape() {
  scope_paths_.push_back("");
  scope_ids_[""] = 0;
}

template <typename S>
Var<S> Tape<S>::leaf(Tensor<S> value, bool requires_grad) {
  Node n;
  n.kind = OpKind::leaf;
  n.scope = scope_stack_.empty() ? 0 : scope_stack_.back();
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var<S>(this, size() - 1);
}

template <typename S>
Var<S> Tape<S>::record(OpKind kind, std::vector<int> inputs, Tensor<S> value, BackwardFn backward) {
  Node n;
  n.kind = kind;
  n.scope = scope_stack_.empty() ? 0 : scope_stack_.back();
  n.requires_grad = false;
  for (int id : inputs) {
    if (id < 0 || id >= size()) throw std::logic_error("op input is not on this tape");
    n.requires_grad = n.requires_grad || requires_grad(id);
  }
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<S>(this, size() - 1);
}

template <typename S>
void Tape<S>::accumulate(int id, const Tensor<S>& grad) {
  accumulate(id, Tensor<S>(grad));
}

template <typename S>
void Tape<S>::accumulate(int id, Tensor<S>&& grad) {
  if (!in_backward_) throw std::logic_error("accumulate() outside backward()");
  if (!requires_grad(id)) return;
  if (grad.shape() != value(id).shape())
    throw ShapeError(std::string("gradient shape ") + to_string(grad.shape()) + " != value shape " +
                     to_string(value(id).shape()) + " at node " + op_name(node(id).kind));
  auto& slot = pending_[static_cast<std::size_t>(id)];
  if (slot)
    slot->array() += grad.array();
  else
    slot = std::move(grad);
}

template <typename S>
void Tape<S>::backward(Var<S> loss) {
  if (loss.tape() != this) throw std::logic_error("loss is not on this tape");
  if (loss.value().size() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  pending_.assign(nodes_.size(), std::nullopt);
  in_backward_ = true;
  pending_[static_cast<std::size_t>(loss.id())] = Tensor<S>::ones(loss.shape());
  for (int id = loss.id(); id >= 0; --id) {
    auto& slot = pending_[static_cast<std::size_t>(id)];
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!slot || !n.requires_grad) continue;
    if (n.kind == OpKind::leaf) {
      if (n.grad)
        n.grad->array() += slot->array();
      else
        n.grad = std::move(*slot);
    } else if (n.backward) {
      n.backward(*this, *slot);
    }
    slot.reset();
  }
  in_backward_ = false;
  pending_.clear();
}

template <typename S>
void Tape<S>::zero_grad() {
  for (auto& n : nodes_) n.grad.reset();
}

template <typename S>
bool Tape<S>::has_grad(Var<S> v) const {
  return node(v.id()).grad.has_value();
}

template <typename S>
Tensor<S> Tape<S>::grad(Var<S> v) const {
  const auto& n = node(v.id());
  return n.grad ? *n.grad : Tensor<S>::zeros(n.value.shape());
}

template <typename S>
void Tape<S>::push_scope(const std::string& name) {
  const std::string& parent = scope_paths_[static_cast<std::size_t>(scope_stack_.empty() ? 0 : scope_stack_.back())];
  std::string path = parent.empty() ? name : parent + "/" + name;
  auto it = scope_ids_.find(path);
  int id;
  if (it == scope_ids_.end()) {
    id = static_cast<int>(scope_paths_.size());
    scope_paths_.push_back(path);
    scope_ids_.emplace(path, id);
  } else {
    id = it->second;
  }
  ++scope_entries_[path];
  scope_stack_.push_back(id);
}

template <typename S>
void Tape<S>::pop_scope() {
  if (scope_stack_.empty()) throw std::logic_error("pop_scope() without push_scope()");
  scope_stack_.pop_back();
}

template <typename S>
int Tape<S>::scope_entries(const std::string& path) const {
  auto it = scope_entries_.find(path);
  return it == scope_entries_.end() ? 0 : it->second;
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

template <typename S>
Tape<S>& same_tape(Var<S> a, Var<S> b) {
  if (!a.valid() || a.tape() != b.tape()) throw std::logic_error("operands live on different tapes");
  return *a.tape();
}

template <typename S, typename F>
Tensor<S> broadcast_binary(const Tensor<S>& a, const Tensor<S>& b, F f) {
  if (a.shape() == b.shape()) {
    Tensor<S> out(a.shape());
    out.array() = a.array().binaryExpr(b.array(), f);
    return out;
  }
  const Shape shape = broadcast_shapes(a.shape(), b.shape());
  const auto ia = detail::broadcast_source_index(a.shape(), shape);
  const auto ib = detail::broadcast_source_index(b.shape(), shape);
  Tensor<S> out(shape);
  for (Index i = 0; i < out.size(); ++i)
    out[i] = f(a[ia[static_cast<std::size_t>(i)]], b[ib[static_cast<std::size_t>(i)]]);
  return out;
}

template <typename S, typename Value, typename Deriv>
Var<S> unary(OpKind kind, Var<S> a, Value value_fn, Deriv deriv_fn) {
  Tape<S>& t = *a.tape();
  Tensor<S> out(a.shape());
  out.array() = a.value().array().unaryExpr(value_fn);
  const int ia = a.id();
  const int io = t.size();  // id the output node is about to receive
  // The derivative may use the input x or the output y.
  return t.record(kind, {ia}, std::move(out), [ia, io, deriv_fn](Tape<S>& tp, const Tensor<S>& g) {
    const auto& x = tp.value(ia).array();
    const auto& y = tp.value(io).array();
    Tensor<S> gx(tp.value(ia).shape());
    for (Index i = 0; i < gx.size(); ++i) gx[i] = g[i] * deriv_fn(x[i], y[i]);
    tp.accumulate(ia, std::move(gx));
  });
}

}  // namespace

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = same_tape(a, b);
  const int ia = a.id(), ib = b.id();
  auto out = broadcast_binary(a.value(), b.value(), [](S x, S y) { return x + y; });
  return t.record(OpKind::add, {ia, ib}, std::move(out), [ia, ib](Tape<S>& tp, const Tensor<S>& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, sum_to_shape(g, tp.value(ia).shape()));
    if (tp.requires_grad(ib)) tp.accumulate(ib, sum_to_shape(g, tp.value(ib).shape()));
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  Tape<S>& t = same_tape(a, b);
  const int ia = a.id(), ib = b.id();
  auto out = broadcast_binary(a.value(), b.value(), [](S x, S y) { return x - y; });
  return t.record(OpKind::sub, {ia, ib}, std::move(out), [ia, ib](Tape<S>& tp, const Tensor<S>& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, sum_to_shape(g, tp.value(ia).shape()));
    if (tp.requires_grad(ib)) {
      Tensor<S> gb = sum_to_shape(g, tp.value(ib).shape());
      gb.array() = -gb.array();
      tp.accumulate(ib, std::move(gb));
    }
  });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  Tape<S>& t = same_tape(a, b);
  const int ia = a.id(), ib = b.id();
  auto out = broadcast_binary(a.value(), b.value(), [](S x, S y) { return x * y; });
  return t.record(OpKind::mul, {ia, ib}, std::move(out), [ia, ib](Tape<S>& tp, const Tensor<S>& g) {
    const auto& av = tp.value(ia);
    const auto& bv = tp.value(ib);
    if (tp.requires_grad(ia)) {
      Tensor<S> ga(g.shape());
      ga.array() = g.array() * broadcast_to(bv, g.shape()).array();
      tp.accumulate(ia, sum_to_shape(ga, av.shape()));
    }
    if (tp.requires_grad(ib)) {
      Tensor<S> gb(g.shape());
      gb.array() = g.array() * broadcast_to(av, g.shape()).array();
      tp.accumulate(ib, sum_to_shape(gb, bv.shape()));
    }
  });
}

template <typename S>
Var<S> div(Var<S> a, Var<S> b) {
  Tape<S>& t = same_tape(a, b);
  if ((b.value().array() == S(0)).any()) throw std::domain_error("division by zero");
  const int ia = a.id(), ib = b.id();
  auto out = broadcast_binary(a.value(), b.value(), [](S x, S y) { return x / y; });
  return t.record(OpKind::div, {ia, ib}, std::move(out), [ia, ib](Tape<S>& tp, const Tensor<S>& g) {
    const auto& av = tp.value(ia);
    const auto& bv = tp.value(ib);
    const Tensor<S> bb = broadcast_to(bv, g.shape());
    if (tp.requires_grad(ia)) {
      Tensor<S> ga(g.shape());
      ga.array() = g.array() / bb.array();
      tp.accumulate(ia, sum_to_shape(ga, av.shape()));
    }
    if (tp.requires_grad(ib)) {
      const Tensor<S> ab = broadcast_to(av, g.shape());
      Tensor<S> gb(g.shape());
      gb.array() = -g.array() * ab.array() / bb.array().square();
      tp.accumulate(ib, sum_to_shape(gb, bv.shape()));
    }
  });
}

template <typename S>
Var<S> neg(Var<S> a) {
  return unary(OpKind::neg, a, [](S x) { return -x; }, [](S, S) { return S(-1); });
}

template <typename S>
Var<S> tanh(Var<S> a) {
  return unary(OpKind::tanh, a, [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  return unary(
      OpKind::sigmoid, a, [](S x) { return S(1) / (S(1) + std::exp(-x)); },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Var<S> sqrt(Var<S> a) {
  if ((a.value().array() < S(0)).any()) throw std::domain_error("sqrt of a negative value");
  return unary(OpKind::sqrt, a, [](S x) { return std::sqrt(x); }, [](S, S y) { return S(0.5) / y; });
}

template <typename S>
Var<S> square(Var<S> a) {
  return unary(OpKind::square, a, [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

template <typename S>
Var<S> abs(Var<S> a) {
  return unary(
      OpKind::abs, a, [](S x) { return std::abs(x); },
      [](S x, S) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); });
}

template <typename S>
Var<S> scale(Var<S> a, S factor) {
  return unary(OpKind::scale, a, [factor](S x) { return factor * x; }, [factor](S, S) { return factor; });
}

template <typename S>
Var<S> add_scalar(Var<S> a, S value) {
  return unary(OpKind::add_scalar, a, [value](S x) { return x + value; }, [](S, S) { return S(1); });
}

template <typename S>
Var<S> elementwise(Elementwise op, Var<S> a, std::optional<Var<S>> b) {
  auto need_b = [&]() -> Var<S> {
    if (!b) throw std::invalid_argument("binary elementwise op needs a second operand");
    return *b;
  };
  switch (op) {
    case Elementwise::add: return add(a, need_b());
    case Elementwise::sub: return sub(a, need_b());
    case Elementwise::mul: return mul(a, need_b());
    case Elementwise::div: return div(a, need_b());
    case Elementwise::neg: return neg(a);
    case Elementwise::tanh: return tanh(a);
    case Elementwise::sigmoid: return sigmoid(a);
    case Elementwise::sqrt: return sqrt(a);
    case Elementwise::square: return square(a);
  }
  throw std::invalid_argument("unknown elementwise op");
}

template <typename S>
Var<S> gelu(Var<S> x, GeluMode mode) {
  if (mode == GeluMode::exact) {
    return unary(
        OpKind::gelu, x, [](S v) { return static_cast<S>(v * normal_cdf(v)); },
        [](S v, S) {
          const double d = static_cast<double>(v);
          const double pdf = std::exp(-0.5 * d * d) / std::sqrt(2.0 * std::numbers::pi);
          return static_cast<S>(normal_cdf(d) + d * pdf);
        });
  }
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      OpKind::gelu, x,
      [](S v) {
        const double d = static_cast<double>(v);
        return static_cast<S>(0.5 * d * (1.0 + std::tanh(c * (d + k * d * d * d))));
      },
      [](S v, S) {
        const double d = static_cast<double>(v);
        const double th = std::tanh(c * (d + k * d * d * d));
        return static_cast<S>(0.5 * (1.0 + th) + 0.5 * d * (1.0 - th * th) * c * (1.0 + 3.0 * k * d * d));
      });
}

template <typename S>
Var<S> softmax(Var<S> x) {
  Tape<S>& t = *x.tape();
  const Index n = x.shape().back();
  const Index rows = x.value().size() / n;
  Tensor<S> out(x.shape());
  auto in = x.value().matrix(rows, n);
  auto y = out.matrix(rows, n);
  for (Index r = 0; r < rows; ++r) {
    y.row(r) = (in.row(r).array() - in.row(r).maxCoeff()).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  const int ix = x.id();
  const int io = t.size();
  return t.record(OpKind::softmax, {ix}, std::move(out), [ix, io, rows, n](Tape<S>& tp, const Tensor<S>& g) {
    auto yv = tp.value(io).matrix(rows, n);
    auto gv = g.matrix(rows, n);
    Tensor<S> gx(g.shape());
    auto gxm = gx.matrix(rows, n);
    for (Index r = 0; r < rows; ++r) {
      const S dot = gv.row(r).dot(yv.row(r));
      gxm.row(r) = (yv.row(r).array() * (gv.row(r).array() - dot)).matrix();
    }
    tp.accumulate(ix, std::move(gx));
  });
}

// ---------------------------------------------------------------------------
// Contractions and reductions

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>& t = same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) throw ShapeError("matmul operands need rank >= 2");
  const Index m = sa[sa.size() - 2], p = sa.back();
  const Index pb = sb[sb.size() - 2], n = sb.back();
  if (p != pb) throw ShapeError("matmul inner extents differ: " + to_string(sa) + " x " + to_string(sb));

  const bool shared_rhs = sb.size() == 2;
  Index batch = 1;
  for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
  if (!shared_rhs) {
    if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin()))
      throw ShapeError("matmul batch extents differ: " + to_string(sa) + " x " + to_string(sb));
  }
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  Tensor<S> out(out_shape);
  if (shared_rhs) {
    out.matrix(batch * m, n).noalias() = a.value().matrix(batch * m, p) * b.value().matrix(p, n);
  } else {
    using Map = typename Tensor<S>::ConstMatrixMap;
    using MutMap = typename Tensor<S>::MatrixMap;
    for (Index i = 0; i < batch; ++i) {
      MutMap(out.data() + i * m * n, m, n).noalias() =
          Map(a.value().data() + i * m * p, m, p) * Map(b.value().data() + i * p * n, p, n);
    }
  }
  const int ia = a.id(), ib = b.id();
  return t.record(OpKind::matmul, {ia, ib}, std::move(out),
                  [ia, ib, batch, m, p, n, shared_rhs](Tape<S>& tp, const Tensor<S>& g) {
                    const auto& av = tp.value(ia);
                    const auto& bv = tp.value(ib);
                    using Map = typename Tensor<S>::ConstMatrixMap;
                    using MutMap = typename Tensor<S>::MatrixMap;
                    if (shared_rhs) {
                      if (tp.requires_grad(ia)) {
                        Tensor<S> ga(av.shape());
                        ga.matrix(batch * m, p).noalias() = g.matrix(batch * m, n) * bv.matrix(p, n).transpose();
                        tp.accumulate(ia, std::move(ga));
                      }
                      if (tp.requires_grad(ib)) {
                        Tensor<S> gb(bv.shape());
                        gb.matrix(p, n).noalias() = av.matrix(batch * m, p).transpose() * g.matrix(batch * m, n);
                        tp.accumulate(ib, std::move(gb));
                      }
                      return;
                    }
                    if (tp.requires_grad(ia)) {
                      Tensor<S> ga(av.shape());
                      for (Index i = 0; i < batch; ++i)
                        MutMap(ga.data() + i * m * p, m, p).noalias() =
                            Map(g.data() + i * m * n, m, n) * Map(bv.data() + i * p * n, p, n).transpose();
                      tp.accumulate(ia, std::move(ga));
                    }
                    if (tp.requires_grad(ib)) {
                      Tensor<S> gb(bv.shape());
                      for (Index i = 0; i < batch; ++i)
                        MutMap(gb.data() + i * p * n, p, n).noalias() =
                            Map(av.data() + i * m * p, m, p).transpose() * Map(g.data() + i * m * n, m, n);
                      tp.accumulate(ib, std::move(gb));
                    }
                  });
}

template <typename S>
Var<S> sum(Var<S> x) {
  Tape<S>& t = *x.tape();
  const int ix = x.id();
  return t.record(OpKind::sum, {ix}, Tensor<S>::scalar(x.value().array().sum()),
                  [ix](Tape<S>& tp, const Tensor<S>& g) {
                    tp.accumulate(ix, Tensor<S>(tp.value(ix).shape(), g[0]));
                  });
}

template <typename S>
Var<S> mean(Var<S> x) {
  return scale(sum(x), S(1) / static_cast<S>(x.value().size()));
}

template <typename S>
Var<S> sum_axis(Var<S> x, Index axis, bool keepdim) {
  Tape<S>& t = *x.tape();
  const Shape& in = x.shape();
  const Index rank = static_cast<Index>(in.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("sum_axis: axis out of range for " + to_string(in));
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= in[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < rank; ++i) inner *= in[static_cast<std::size_t>(i)];
  const Index n = in[static_cast<std::size_t>(axis)];

  Shape out_shape = in;
  if (keepdim)
    out_shape[static_cast<std::size_t>(axis)] = 1;
  else
    out_shape.erase(out_shape.begin() + axis);
  Tensor<S> out(out_shape.empty() ? Shape{1} : out_shape);
  const auto& xv = x.value();
  for (Index o = 0; o < outer; ++o)
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * n + j) * inner + i];

  const int ix = x.id();
  return t.record(OpKind::sum_axis, {ix}, std::move(out), [ix, outer, inner, n](Tape<S>& tp, const Tensor<S>& g) {
    Tensor<S> gx(tp.value(ix).shape());
    for (Index o = 0; o < outer; ++o)
      for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < inner; ++i) gx[(o * n + j) * inner + i] = g[o * inner + i];
    tp.accumulate(ix, std::move(gx));
  });
}

template <typename S>
Var<S> mean_axis(Var<S> x, Index axis, bool keepdim) {
  const Index n = x.value().dim(axis);
  return scale(sum_axis(x, axis, keepdim), S(1) / static_cast<S>(n));
}

// ---------------------------------------------------------------------------
// Layout

template <typename S>
Var<S> reshape(Var<S> x, Shape shape) {
  Tape<S>& t = *x.tape();
  const int ix = x.id();
  return t.record(OpKind::reshape, {ix}, x.value().reshaped(std::move(shape)), [ix](Tape<S>& tp, const Tensor<S>& g) {
    tp.accumulate(ix, g.reshaped(tp.value(ix).shape()));
  });
}

template <typename S>
Var<S> gather(Var<S> x, Shape out_shape, std::shared_ptr<const std::vector<Index>> index) {
  Tape<S>& t = *x.tape();
  const Index n = num_elements(out_shape);
  if (static_cast<Index>(index->size()) != n)
    throw ShapeError("gather index has " + std::to_string(index->size()) + " entries for shape " +
                     to_string(out_shape));
  const auto& xv = x.value();
  Tensor<S> out(std::move(out_shape));
  for (Index i = 0; i < n; ++i) {
    const Index src = (*index)[static_cast<std::size_t>(i)];
    if (src < 0 || src >= xv.size()) throw std::out_of_range("gather index out of range");
    out[i] = xv[src];
  }
  const int ix = x.id();
  return t.record(OpKind::gather, {ix}, std::move(out), [ix, index](Tape<S>& tp, const Tensor<S>& g) {
    Tensor<S> gx(tp.value(ix).shape());
    for (Index i = 0; i < g.size(); ++i) gx[(*index)[static_cast<std::size_t>(i)]] += g[i];
    tp.accumulate(ix, std::move(gx));
  });
}

template <typename S>
Var<S> permute(Var<S> x, const std::vector<Index>& axes) {
  const Shape& in = x.shape();
  const std::size_t rank = in.size();
  if (axes.size() != rank) throw ShapeError("permute: axes do not match rank of " + to_string(in));
  std::vector<bool> seen(rank, false);
  for (Index a : axes) {
    if (a < 0 || a >= static_cast<Index>(rank) || seen[static_cast<std::size_t>(a)])
      throw ShapeError("permute: invalid axis list");
    seen[static_cast<std::size_t>(a)] = true;
  }
  const auto in_strides = row_major_strides(in);
  Shape out(rank);
  std::vector<Index> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out[i] = in[static_cast<std::size_t>(axes[i])];
    strides[i] = in_strides[static_cast<std::size_t>(axes[i])];
  }
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(num_elements(out)));
  std::vector<Index> counter(rank, 0);
  Index src = 0;
  for (auto& slot : *index) {
    slot = src;
    for (Index axis = static_cast<Index>(rank) - 1; axis >= 0; --axis) {
      const auto ax = static_cast<std::size_t>(axis);
      if (++counter[ax] < out[ax]) {
        src += strides[ax];
        break;
      }
      src -= strides[ax] * (out[ax] - 1);
      counter[ax] = 0;
    }
  }
  return gather(x, std::move(out), std::move(index));
}

template <typename S>
Var<S> slice(Var<S> x, Index axis, Index start, Index length) {
  const Shape& in = x.shape();
  const Index rank = static_cast<Index>(in.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("slice: axis out of range for " + to_string(in));
  const Index n = in[static_cast<std::size_t>(axis)];
  if (start < 0 || length < 1 || start + length > n) throw ShapeError("slice: range out of bounds");
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= in[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < rank; ++i) inner *= in[static_cast<std::size_t>(i)];
  Shape out = in;
  out[static_cast<std::size_t>(axis)] = length;
  auto index = std::make_shared<std::vector<Index>>();
  index->reserve(static_cast<std::size_t>(outer * length * inner));
  for (Index o = 0; o < outer; ++o)
    for (Index j = 0; j < length; ++j)
      for (Index i = 0; i < inner; ++i) index->push_back((o * n + start + j) * inner + i);
  return gather(x, std::move(out), std::move(index));
}

#define DMSR_INSTANTIATE_OPS(S)                                                   \
  template class Tape<S>;                                                         \
  template Var<S> add(Var<S>, Var<S>);                                            \
  template Var<S> sub(Var<S>, Var<S>);                                            \
  template Var<S> mul(Var<S>, Var<S>);                                            \
  template Var<S> div(Var<S>, Var<S>);                                            \
  template Var<S> neg(Var<S>);                                                    \
  template Var<S> tanh(Var<S>);                                                   \
  template Var<S> sigmoid(Var<S>);                                                \
  template Var<S> sqrt(Var<S>);                                                   \
  template Var<S> square(Var<S>);                                                 \
  template Var<S> abs(Var<S>);                                                    \
  template Var<S> scale(Var<S>, S);                                               \
  template Var<S> add_scalar(Var<S>, S);                                          \
  template Var<S> elementwise(Elementwise, Var<S>, std::optional<Var<S>>);        \
  template Var<S> gelu(Var<S>, GeluMode);                                         \
  template Var<S> softmax(Var<S>);                                                \
  template Var<S> matmul(Var<S>, Var<S>);                                         \
  template Var<S> sum(Var<S>);                                                    \
  template Var<S> mean(Var<S>);                                                   \
  template Var<S> sum_axis(Var<S>, Index, bool);                                  \
  template Var<S> mean_axis(Var<S>, Index, bool);                                 \
  template Var<S> reshape(Var<S>, Shape);                                         \
  template Var<S> gather(Var<S>, Shape, std::shared_ptr<const std::vector<Index>>); \
  template Var<S> permute(Var<S>, const std::vector<Index>&);                     \
  template Var<S> slice(Var<S>, Index, Index, Index);

DMSR_INSTANTIATE_OPS(float)
DMSR_INSTANTIATE_OPS(double)

}  // namespace dmsr
