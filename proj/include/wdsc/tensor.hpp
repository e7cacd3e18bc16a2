// Dense tensors with tape-free reverse-mode differentiation.
//
// A Tensor is a cheap handle to a Node. Every op produces a new Node that
// remembers its inputs and a backward closure, but only when at least one
// input requires a gradient; inference graphs therefore hold no history.
// Values are never mutated after an op creates them. Leaf parameters are the
// one exception: the optimizer writes them between graphs.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace wdsc {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class Real>
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until a backward pass reaches the node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
};

template <class Real>
class Tensor {
 public:
  using value_type = Real;
  using node_type = Node<Real>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<node_type> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false) {
    if (numel(shape) != values.size()) {
      throw ShapeError("tensor data size " + std::to_string(values.size()) +
                       " does not match shape " + to_string(shape));
    }
    auto node = std::make_shared<node_type>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }
  static Tensor full(Shape shape, Real v, bool requires_grad = false) {
    const auto n = numel(shape);
    return from(std::move(shape), std::vector<Real>(n, v), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), Real(0), requires_grad);
  }
  static Tensor scalar(Real v) { return from({}, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const Real> data() const { return node_->value; }
  const Real& operator[](std::size_t i) const { return node_->value[i]; }
  Real item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  // Only leaves may be written in place (parameter updates, test probes).
  std::span<Real> mutable_data() {
    if (!node_->is_leaf()) throw std::logic_error("mutable_data() on a non-leaf tensor");
    return node_->value;
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw std::logic_error("requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const Real> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Copy of the values, cut from the graph.
  Tensor detach() const { return from(shape(), node_->value); }

  node_type* node() const { return node_.get(); }
  const std::shared_ptr<node_type>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<node_type> node_;
};

namespace detail {

template <class Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> value, const char* op,
                         std::vector<Tensor<Real>> inputs,
                         std::function<void(Node<Real>&)> backward) {
  auto node = std::make_shared<Node<Real>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool needs =
      std::any_of(inputs.begin(), inputs.end(), [](const auto& t) { return t.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor<Real>(std::move(node));
}

// Gradient sink for input `i` of `out`, or nullptr when that input is constant.
template <class Real>
Real* grad_of(Node<Real>& out, std::size_t i) {
  auto& in = *out.inputs[i];
  if (!in.requires_grad) return nullptr;
  in.ensure_grad();
  return in.grad.data();
}

template <class Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

// Elementwise unary op. `deriv(x, y)` returns dy/dx.
template <class Real, class F, class D>
Tensor<Real> unary(const Tensor<Real>& x, const char* op, F f, D deriv) {
  std::vector<Real> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result<Real>(x.shape(), std::move(out), op, {x}, [deriv](Node<Real>& self) {
    Real* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& xv = self.inputs[0]->value;
    for (std::size_t i = 0; i < self.value.size(); ++i)
      gx[i] += self.grad[i] * deriv(xv[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Graph traversal

template <class Real>
void backward(const Tensor<Real>& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Post-order DFS gives a topological order with inputs before outputs.
  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> visited;
  std::vector<std::pair<Node<Real>*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<Real>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (!node->is_leaf()) node->grad.assign(node->value.size(), Real(0));
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward(**it);
  }
}

template <class Real>
bool all_finite(const Tensor<Real>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](Real v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Elementwise binary ops (identical shapes)

template <class Real>
Tensor<Real> operator+(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result<Real>(a.shape(), std::move(out), "add", {a, b}, [](Node<Real>& s) {
    for (std::size_t k = 0; k < 2; ++k)
      if (Real* g = detail::grad_of(s, k))
        for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
  });
}

template <class Real>
Tensor<Real> operator-(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result<Real>(a.shape(), std::move(out), "sub", {a, b}, [](Node<Real>& s) {
    if (Real* g = detail::grad_of(s, 0))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
    if (Real* g = detail::grad_of(s, 1))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] -= s.grad[i];
  });
}

template <class Real>
Tensor<Real> operator*(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result<Real>(a.shape(), std::move(out), "mul", {a, b}, [](Node<Real>& s) {
    const auto& av = s.inputs[0]->value;
    const auto& bv = s.inputs[1]->value;
    if (Real* g = detail::grad_of(s, 0))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] * bv[i];
    if (Real* g = detail::grad_of(s, 1))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] * av[i];
  });
}

template <class Real>
Tensor<Real> operator/(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape(a, b, "div");
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  return detail::make_result<Real>(a.shape(), std::move(out), "div", {a, b}, [](Node<Real>& s) {
    const auto& bv = s.inputs[1]->value;
    if (Real* g = detail::grad_of(s, 0))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] / bv[i];
    if (Real* g = detail::grad_of(s, 1))
      for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] -= s.grad[i] * s.value[i] / bv[i];
  });
}

template <class Real>
Tensor<Real> operator+(const Tensor<Real>& x, Real c) {
  return detail::unary(x, "add_scalar", [c](Real v) { return v + c; }, [](Real, Real) { return Real(1); });
}
template <class Real>
Tensor<Real> operator+(Real c, const Tensor<Real>& x) { return x + c; }
template <class Real>
Tensor<Real> operator-(const Tensor<Real>& x, Real c) { return x + (-c); }
template <class Real>
Tensor<Real> operator-(Real c, const Tensor<Real>& x) {
  return detail::unary(x, "rsub_scalar", [c](Real v) { return c - v; }, [](Real, Real) { return Real(-1); });
}
template <class Real>
Tensor<Real> operator*(const Tensor<Real>& x, Real c) {
  return detail::unary(x, "mul_scalar", [c](Real v) { return v * c; }, [c](Real, Real) { return c; });
}
template <class Real>
Tensor<Real> operator*(Real c, const Tensor<Real>& x) { return x * c; }
template <class Real>
Tensor<Real> operator-(const Tensor<Real>& x) { return x * Real(-1); }

// ---------------------------------------------------------------------------
// Elementwise unary ops

template <class Real>
Tensor<Real> square(const Tensor<Real>& x) {
  return detail::unary(x, "square", [](Real v) { return v * v; }, [](Real v, Real) { return 2 * v; });
}

template <class Real>
Tensor<Real> abs(const Tensor<Real>& x) {
  return detail::unary(x, "abs", [](Real v) { return std::abs(v); },
                       [](Real v, Real) { return v > 0 ? Real(1) : (v < 0 ? Real(-1) : Real(0)); });
}

template <class Real>
Tensor<Real> exp(const Tensor<Real>& x) {
  return detail::unary(x, "exp", [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

template <class Real>
Tensor<Real> log(const Tensor<Real>& x) {
  return detail::unary(x, "log", [](Real v) { return std::log(v); }, [](Real v, Real) { return 1 / v; });
}

template <class Real>
Tensor<Real> sqrt(const Tensor<Real>& x) {
  return detail::unary(x, "sqrt", [](Real v) { return std::sqrt(v); },
                       [](Real, Real y) { return Real(0.5) / y; });
}

template <class Real>
Tensor<Real> tanh(const Tensor<Real>& x) {
  return detail::unary(x, "tanh", [](Real v) { return std::tanh(v); },
                       [](Real, Real y) { return 1 - y * y; });
}

template <class Real>
Real sigmoid_scalar(Real v) {
  if (v >= 0) return 1 / (1 + std::exp(-v));
  const Real e = std::exp(v);
  return e / (1 + e);
}

template <class Real>
Real softplus_scalar(Real v) {
  return std::max(v, Real(0)) + std::log1p(std::exp(-std::abs(v)));
}

// Inverse of softplus for y > 0.
template <class Real>
Real softplus_inverse(Real y) {
  return y > Real(20) ? y : std::log(std::expm1(y));
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  return detail::unary(x, "sigmoid", [](Real v) { return sigmoid_scalar(v); },
                       [](Real, Real y) { return y * (1 - y); });
}

template <class Real>
Tensor<Real> softplus(const Tensor<Real>& x) {
  return detail::unary(x, "softplus", [](Real v) { return softplus_scalar(v); },
                       [](Real v, Real) { return sigmoid_scalar(v); });
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  return detail::unary(x, "relu", [](Real v) { return v > 0 ? v : Real(0); },
                       [](Real v, Real) { return v > 0 ? Real(1) : Real(0); });
}

// Standard normal CDF.
template <class Real>
Tensor<Real> normal_cdf(const Tensor<Real>& x) {
  return detail::unary(
      x, "normal_cdf", [](Real v) { return Real(0.5) * std::erfc(-v * Real(M_SQRT1_2)); },
      [](Real v, Real) { return Real(0.5 * M_2_SQRTPI * M_SQRT1_2) * std::exp(Real(-0.5) * v * v); });
}

// max(x, floor); no gradient where the floor is active.
template <class Real>
Tensor<Real> clamp_min(const Tensor<Real>& x, Real floor) {
  return detail::unary(x, "clamp_min", [floor](Real v) { return std::max(v, floor); },
                       [floor](Real v, Real) { return v > floor ? Real(1) : Real(0); });
}

template <class Real>
Tensor<Real> clamp(const Tensor<Real>& x, Real lo, Real hi) {
  return detail::unary(x, "clamp", [lo, hi](Real v) { return std::clamp(v, lo, hi); },
                       [lo, hi](Real v, Real) { return (v > lo && v < hi) ? Real(1) : Real(0); });
}

// x^e for x > 0, and 0 elsewhere.
template <class Real>
Tensor<Real> pow(const Tensor<Real>& x, Real e) {
  return detail::unary(x, "pow", [e](Real v) { return v > 0 ? std::pow(v, e) : Real(0); },
                       [e](Real v, Real y) { return v > 0 ? e * y / v : Real(0); });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

template <class Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  Real acc = 0;
  for (Real v : x.data()) acc += v;
  return detail::make_result<Real>({}, {acc}, "sum", {x}, [](Node<Real>& s) {
    if (Real* g = detail::grad_of(s, 0)) {
      const Real gs = s.grad[0];
      for (std::size_t i = 0; i < s.inputs[0]->value.size(); ++i) g[i] += gs;
    }
  });
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& x) {
  return sum(x) * (Real(1) / static_cast<Real>(x.size()));
}

// [C, ...] -> [C], mean over everything but the leading dimension.
template <class Real>
Tensor<Real> mean_per_channel(const Tensor<Real>& x) {
  const std::size_t c = x.dim(0);
  const std::size_t m = x.size() / c;
  std::vector<Real> out(c, Real(0));
  for (std::size_t k = 0; k < c; ++k) {
    Real acc = 0;
    for (std::size_t i = 0; i < m; ++i) acc += x[k * m + i];
    out[k] = acc / static_cast<Real>(m);
  }
  return detail::make_result<Real>({c}, std::move(out), "mean_per_channel", {x},
                                   [c, m](Node<Real>& s) {
                                     if (Real* g = detail::grad_of(s, 0))
                                       for (std::size_t k = 0; k < c; ++k)
                                         for (std::size_t i = 0; i < m; ++i)
                                           g[k * m + i] += s.grad[k] / static_cast<Real>(m);
                                   });
}

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  std::vector<Real> out(x.data().begin(), x.data().end());
  return detail::make_result<Real>(std::move(shape), std::move(out), "reshape", {x},
                                   [](Node<Real>& s) {
                                     if (Real* g = detail::grad_of(s, 0))
                                       for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
                                   });
}

// Concatenation along the leading (channel) dimension.
template <class Real>
Tensor<Real> concat(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw ShapeError("concat: incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<Real> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const std::size_t na = a.size();
  return detail::make_result<Real>(std::move(shape), std::move(out), "concat", {a, b},
                                   [na](Node<Real>& s) {
                                     if (Real* g = detail::grad_of(s, 0))
                                       for (std::size_t i = 0; i < na; ++i) g[i] += s.grad[i];
                                     if (Real* g = detail::grad_of(s, 1))
                                       for (std::size_t i = na; i < s.grad.size(); ++i) g[i - na] += s.grad[i];
                                   });
}

// ---------------------------------------------------------------------------
// Trailing-axis broadcasts: x is [..., M], p has x's shape without the last axis.

namespace detail {
template <class Real>
std::size_t broadcast_width(const Tensor<Real>& x, const Tensor<Real>& p, const char* op) {
  if (x.rank() == 0 || p.size() * x.shape().back() != x.size() ||
      !std::equal(p.shape().begin(), p.shape().end(), x.shape().begin())) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(p.shape()) + " over " +
                     to_string(x.shape()));
  }
  return x.shape().back();
}
}  // namespace detail

template <class Real>
Tensor<Real> add_broadcast(const Tensor<Real>& x, const Tensor<Real>& p) {
  const std::size_t m = detail::broadcast_width(x, p, "add_broadcast");
  std::vector<Real> out(x.size());
  for (std::size_t r = 0; r < p.size(); ++r)
    for (std::size_t i = 0; i < m; ++i) out[r * m + i] = x[r * m + i] + p[r];
  return detail::make_result<Real>(x.shape(), std::move(out), "add_broadcast", {x, p},
                                   [m](Node<Real>& s) {
                                     if (Real* g = detail::grad_of(s, 0))
                                       for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
                                     if (Real* g = detail::grad_of(s, 1))
                                       for (std::size_t i = 0; i < s.grad.size(); ++i) g[i / m] += s.grad[i];
                                   });
}

template <class Real>
Tensor<Real> mul_broadcast(const Tensor<Real>& x, const Tensor<Real>& p) {
  const std::size_t m = detail::broadcast_width(x, p, "mul_broadcast");
  std::vector<Real> out(x.size());
  for (std::size_t r = 0; r < p.size(); ++r)
    for (std::size_t i = 0; i < m; ++i) out[r * m + i] = x[r * m + i] * p[r];
  return detail::make_result<Real>(x.shape(), std::move(out), "mul_broadcast", {x, p},
                                   [m](Node<Real>& s) {
                                     const auto& xv = s.inputs[0]->value;
                                     const auto& pv = s.inputs[1]->value;
                                     if (Real* g = detail::grad_of(s, 0))
                                       for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] * pv[i / m];
                                     if (Real* g = detail::grad_of(s, 1))
                                       for (std::size_t i = 0; i < s.grad.size(); ++i) g[i / m] += s.grad[i] * xv[i];
                                   });
}

// Batched per-channel matrix product: W [C,R,K] x X [C,K,M] -> [C,R,M].
template <class Real>
Tensor<Real> channel_matmul(const Tensor<Real>& w, const Tensor<Real>& x) {
  if (w.rank() != 3 || x.rank() != 3 || w.dim(0) != x.dim(0) || w.dim(2) != x.dim(1)) {
    throw ShapeError("channel_matmul: " + to_string(w.shape()) + " x " + to_string(x.shape()));
  }
  const std::size_t c = w.dim(0), r = w.dim(1), k = w.dim(2), m = x.dim(2);
  std::vector<Real> out(c * r * m, Real(0));
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < r; ++i) {
      Real* o = &out[(ch * r + i) * m];
      for (std::size_t j = 0; j < k; ++j) {
        const Real wij = w[(ch * r + i) * k + j];
        const Real* xr = &x.data()[(ch * k + j) * m];
        for (std::size_t t = 0; t < m; ++t) o[t] += wij * xr[t];
      }
    }
  return detail::make_result<Real>({c, r, m}, std::move(out), "channel_matmul", {w, x},
                                   [c, r, k, m](Node<Real>& s) {
                                     const auto& wv = s.inputs[0]->value;
                                     const auto& xv = s.inputs[1]->value;
                                     Real* gw = detail::grad_of(s, 0);
                                     Real* gx = detail::grad_of(s, 1);
                                     for (std::size_t ch = 0; ch < c; ++ch)
                                       for (std::size_t i = 0; i < r; ++i) {
                                         const Real* go = &s.grad[(ch * r + i) * m];
                                         for (std::size_t j = 0; j < k; ++j) {
                                           const std::size_t wi = (ch * r + i) * k + j;
                                           const std::size_t xo = (ch * k + j) * m;
                                           if (gw) {
                                             Real acc = 0;
                                             for (std::size_t t = 0; t < m; ++t) acc += go[t] * xv[xo + t];
                                             gw[wi] += acc;
                                           }
                                           if (gx)
                                             for (std::size_t t = 0; t < m; ++t) gx[xo + t] += go[t] * wv[wi];
                                         }
                                       }
                                   });
}

// Casts values (and nothing else) between precisions.
template <class To, class From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> out(x.data().begin(), x.data().end());
  return Tensor<To>::from(x.shape(), std::move(out));
}

}  // namespace wdsc
