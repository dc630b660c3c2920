#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A Graph is a tape: every op appends a node whose inputs have smaller ids, so
// reverse id order is a topological order. Backward walks that order exactly
// once, which also fixes the gradient accumulation order.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "upt/tensor.hpp"

namespace upt {

template <class T>
class Graph;

/// Trainable array owned by a ParameterSet. 1-D parameters (biases, norm
/// gains) are excluded from weight decay.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay = true;
  std::size_t index = 0;

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    else grad.fill(T{0});
  }
};

/// Ordered, name-addressable collection of parameters. Registration order is
/// the canonical order for checkpoints and optimizer state.
template <class T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter<T>& add(std::string name, Tensor<T> init) {
    if (by_name_.count(name)) throw ValueError("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->decay = init.ndim() > 1;
    p->name = std::move(name);
    p->value = std::move(init);
    p->index = params_.size();
    p->zero_grad();
    by_name_[p->name] = p.get();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, Parameter<T>*> by_name_;
};

/// Handle to a node in a Graph.
template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const { return graph->requires_grad(id); }
};

template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Tensor<T> v) { return push(std::move(v), false, nullptr, nullptr); }

  /// Leaf that receives a gradient (used for gradient checks on inputs).
  Var<T> variable(Tensor<T> v) { return push(std::move(v), grad_enabled_, nullptr, nullptr); }

  /// Leaf bound to a parameter; repeated calls return the same node so that
  /// every use of the parameter accumulates into one gradient.
  Var<T> param(Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return {this, it->second};
    auto v = push(p.value, grad_enabled_, nullptr, &p);
    param_nodes_[&p] = v.id;
    return v;
  }

  /// Copy of x's value with no gradient path.
  Var<T> detach(Var<T> x) { return constant(x.value()); }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool rg = false;
    if (grad_enabled_)
      for (const auto& in : inputs) rg = rg || requires_grad(in.id);
    return push(std::move(value), rg, rg ? std::move(fn) : nullptr, nullptr);
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    bool rg = false;
    if (grad_enabled_)
      for (const auto& in : inputs) rg = rg || requires_grad(in.id);
    return push(std::move(value), rg, rg ? std::move(fn) : nullptr, nullptr);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  /// Gradient buffer for node id, zero-initialized on first access.
  Tensor<T>& grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  const Tensor<T>& grad(Var<T> v) {
    return grad_buffer(v.id);
  }

  void backward(Var<T> loss) {
    if (loss.value().size() != 1)
      throw DimensionError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (!requires_grad(loss.id)) return;
    grad_buffer(loss.id)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this, i);
    }
  }

  /// Adds this graph's parameter-leaf gradients into Parameter::grad.
  void accumulate_param_grads() {
    for (auto& [p, id] : param_nodes_) {
      if (!has_grad(id)) continue;
      if (p->grad.shape() != p->value.shape()) p->zero_grad();
      const auto& g = nodes_[id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  Var<T> push(Tensor<T> v, bool rg, BackwardFn fn, Parameter<T>* p) {
    nodes_.push_back(Node{std::move(v), Tensor<T>{}, rg, std::move(fn), p});
    return {this, nodes_.size() - 1};
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;  // deque: references to values stay valid as the tape grows
  std::unordered_map<Parameter<T>*, std::size_t> param_nodes_;
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;

template <class T>
MatMap<T> as_mat(Tensor<T>& t) { return MatMap<T>(t.data(), t.rows(), t.cols()); }
template <class T>
CMatMap<T> as_mat(const Tensor<T>& t) { return CMatMap<T>(t.data(), t.rows(), t.cols()); }

inline Shape with_cols(Shape s, std::size_t cols) {
  s.back() = cols;
  return s;
}

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <class T>
void require_same_graph(const Var<T>& a, const Var<T>& b) {
  if (a.graph != b.graph) throw ValueError("operands belong to different graphs");
}

}  // namespace detail

/// a[m x k] * b[k x n], or a * b^T when transpose_b is set (b is n x k).
template <class T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_b = false) {
  detail::require_same_graph(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (B.ndim() != 2) throw DimensionError("matmul: right operand must be a matrix, got " + shape_str(B.shape()));
  const std::size_t k = transpose_b ? B.cols() : B.rows();
  const std::size_t n = transpose_b ? B.rows() : B.cols();
  if (A.cols() != k)
    throw DimensionError("matmul: inner extents differ " + shape_str(A.shape()) + " x " +
                         shape_str(B.shape()) + (transpose_b ? "^T" : ""));
  Tensor<T> out(detail::with_cols(A.shape(), n));
  auto O = detail::as_mat(out);
  auto Am = detail::as_mat(A);
  detail::CMatMap<T> Bm(B.data(), transpose_b ? n : k, transpose_b ? k : n);
  if (transpose_b) O.noalias() = Am * Bm.transpose();
  else O.noalias() = Am * Bm;

  Graph<T>& g = *a.graph;
  return g.record(std::move(out), {a, b}, [ia = a.id, ib = b.id, transpose_b, k, n](Graph<T>& g, std::size_t self) {
    const auto& dO = g.grad_buffer(self);
    auto dOm = detail::as_mat(dO);
    const auto& A = g.value(ia);
    const auto& B = g.value(ib);
    detail::CMatMap<T> Bm(B.data(), transpose_b ? n : k, transpose_b ? k : n);
    if (g.requires_grad(ia)) {
      auto dA = detail::as_mat(g.grad_buffer(ia));
      if (transpose_b) dA.noalias() += dOm * Bm;
      else dA.noalias() += dOm * Bm.transpose();
    }
    if (g.requires_grad(ib)) {
      auto& dBt = g.grad_buffer(ib);
      detail::MatMap<T> dB(dBt.data(), transpose_b ? n : k, transpose_b ? k : n);
      auto Am = detail::as_mat(A);
      if (transpose_b) dB.noalias() += dOm.transpose() * Am;
      else dB.noalias() += Am.transpose() * dOm;
    }
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_graph(a, b);
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return a.graph->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad_buffer(self);
    for (auto id : {ia, ib}) {
      if (!g.requires_grad(id)) continue;
      auto& gi = g.grad_buffer(id);
      for (std::size_t i = 0; i < d.size(); ++i) gi[i] += d[i];
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_graph(a, b);
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return a.graph->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad_buffer(self);
    if (g.requires_grad(ia)) {
      auto& ga = g.grad_buffer(ia);
      for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i];
    }
    if (g.requires_grad(ib)) {
      auto& gb = g.grad_buffer(ib);
      for (std::size_t i = 0; i < d.size(); ++i) gb[i] -= d[i];
    }
  });
}

/// Elementwise product of same-shaped tensors.
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_graph(a, b);
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return a.graph->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad_buffer(self);
    const auto& A = g.value(ia);
    const auto& B = g.value(ib);
    if (g.requires_grad(ia)) {
      auto& ga = g.grad_buffer(ia);
      for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i] * B[i];
    }
    if (g.requires_grad(ib)) {
      auto& gb = g.grad_buffer(ib);
      for (std::size_t i = 0; i < d.size(); ++i) gb[i] += d[i] * A[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> x, T s) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v *= s;
  return x.graph->record(std::move(out), {x}, [ix = x.id, s](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad_buffer(self);
    auto& gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += s * d[i];
  });
}

template <class T>
Var<T> add_scalar(Var<T> x, T s) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v += s;
  return x.graph->record(std::move(out), {x}, [ix = x.id](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad_buffer(self);
    auto& gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i];
  });
}

/// x[... x n] + v[n], v broadcast over every row.
template <class T>
Var<T> add_row(Var<T> x, Var<T> v) {
  detail::require_same_graph(x, v);
  const auto& X = x.value();
  const auto& V = v.value();
  if (V.size() != X.cols())
    throw DimensionError("add_row: vector " + shape_str(V.shape()) + " vs rows of " + shape_str(X.shape()));
  Tensor<T> out = X;
  const std::size_t n = X.cols();
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += V[c];
  return x.graph->record(std::move(out), {x, v}, [ix = x.id, iv = v.id, n](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad_buffer(self);
    if (g.requires_grad(ix)) {
      auto& gx = g.grad_buffer(ix);
      for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i];
    }
    if (g.requires_grad(iv)) {
      auto& gv = g.grad_buffer(iv);
      const std::size_t rows = d.size() / n;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) gv[c] += d[r * n + c];
    }
  });
}

/// x[... x n] * v[n], v broadcast over every row.
template <class T>
Var<T> mul_row(Var<T> x, Var<T> v) {
  detail::require_same_graph(x, v);
  const auto& X = x.value();
  const auto& V = v.value();
  if (V.size() != X.cols())
    throw DimensionError("mul_row: vector " + shape_str(V.shape()) + " vs rows of " + shape_str(X.shape()));
  Tensor<T> out = X;
  const std::size_t n = X.cols();
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] *= V[c];
  return x.graph->record(std::move(out), {x, v}, [ix = x.id, iv = v.id, n](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad_buffer(self);
    const auto& X = g.value(ix);
    const auto& V = g.value(iv);
    const std::size_t rows = d.size() / n;
    if (g.requires_grad(ix)) {
      auto& gx = g.grad_buffer(ix);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += d[r * n + c] * V[c];
    }
    if (g.requires_grad(iv)) {
      auto& gv = g.grad_buffer(iv);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) gv[c] += d[r * n + c] * X[r * n + c];
    }
  });
}

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <class T>
Var<T> gelu(Var<T> x) {
  static constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  static constexpr T kA = T(0.044715);
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const auto& X = x.value();
  const auto n = static_cast<Eigen::Index>(X.size());
  Eigen::Map<const Arr> xv(X.data(), n);
  auto th = std::make_shared<Arr>((kC * (xv + kA * xv.cube())).tanh());
  Tensor<T> out(X.shape());
  Eigen::Map<Arr>(out.data(), n) = T(0.5) * xv * (T(1) + *th);
  return x.graph->record(std::move(out), {x}, [ix = x.id, th](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad_buffer(self);
    const auto& X = g.value(ix);
    auto& gx = g.grad_buffer(ix);
    const auto n = static_cast<Eigen::Index>(d.size());
    Eigen::Map<const Arr> xv(X.data(), n), dv(d.data(), n);
    const Arr& t = *th;
    Eigen::Map<Arr>(gx.data(), n) +=
        dv * (T(0.5) * (T(1) + t) + T(0.5) * xv * (T(1) - t.square()) * kC * (T(1) + T(3) * kA * xv.square()));
  });
}

/// Softmax along the last axis, computed with max-subtraction.
template <class T>
Var<T> softmax(Var<T> x) {
  const auto& X = x.value();
  Tensor<T> out(X.shape());
  const std::size_t n = X.cols();
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const T* in = X.data() + r * n;
    T* o = out.data() + r * n;
    T m = in[0];
    for (std::size_t c = 1; c < n; ++c) m = std::max(m, in[c]);
    T s = 0;
    for (std::size_t c = 0; c < n; ++c) s += (o[c] = std::exp(in[c] - m));
    const T inv = T(1) / s;
    for (std::size_t c = 0; c < n; ++c) o[c] *= inv;
  }
  return x.graph->record(std::move(out), {x}, [ix = x.id, n](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad_buffer(self);
    const auto& Y = g.value(self);
    auto& gx = g.grad_buffer(ix);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      const T* y = Y.data() + r * n;
      const T* dy = d.data() + r * n;
      T dot = 0;
      for (std::size_t c = 0; c < n; ++c) dot += dy[c] * y[c];
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += y[c] * (dy[c] - dot);
    }
  });
}

namespace detail {

template <class T>
Var<T> layer_norm_impl(Var<T> x, const Var<T>* gain, const Var<T>* bias, T eps) {
  const auto& X = x.value();
  const std::size_t n = X.cols();
  const std::size_t rows = X.rows();
  if (gain && gain->value().size() != n) throw DimensionError("layer_norm: gain size mismatch");
  if (bias && bias->value().size() != n) throw DimensionError("layer_norm: bias size mismatch");
  Tensor<T> xhat(X.shape());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = X.data() + r * n;
    T mu = 0;
    for (std::size_t c = 0; c < n; ++c) mu += in[c];
    mu /= T(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= T(n);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) xhat[r * n + c] = (in[c] - mu) * rstd[r];
  }
  Tensor<T> out = xhat;
  if (gain || bias) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        T& o = out[r * n + c];
        if (gain) o *= gain->value()[c];
        if (bias) o += bias->value()[c];
      }
  }
  std::vector<Var<T>> inputs{x};
  if (gain) inputs.push_back(*gain);
  if (bias) inputs.push_back(*bias);
  const std::size_t ig = gain ? gain->id : 0;
  const std::size_t ib = bias ? bias->id : 0;
  const bool has_gain = gain != nullptr;
  const bool has_bias = bias != nullptr;
  return x.graph->record(
      std::move(out), inputs,
      [ix = x.id, ig, ib, has_gain, has_bias, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](
          Graph<T>& g, std::size_t self) {
        const auto& d = g.grad_buffer(self);
        const T* G = has_gain ? g.value(ig).data() : nullptr;
        if (has_gain && g.requires_grad(ig)) {
          auto& gg = g.grad_buffer(ig);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < n; ++c) gg[c] += d[r * n + c] * xhat[r * n + c];
        }
        if (has_bias && g.requires_grad(ib)) {
          auto& gb = g.grad_buffer(ib);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < n; ++c) gb[c] += d[r * n + c];
        }
        if (!g.requires_grad(ix)) return;
        auto& gx = g.grad_buffer(ix);
        std::vector<T> dxhat(n);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_d = 0, mean_dx = 0;
          for (std::size_t c = 0; c < n; ++c) {
            dxhat[c] = d[r * n + c] * (G ? G[c] : T(1));
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xhat[r * n + c];
          }
          mean_d /= T(n);
          mean_dx /= T(n);
          for (std::size_t c = 0; c < n; ++c)
            gx[r * n + c] += rstd[r] * (dxhat[c] - mean_d - xhat[r * n + c] * mean_dx);
        }
      });
}

}  // namespace detail

/// Per-row normalization to zero mean / unit variance, then gain * x + bias.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-6)) {
  return detail::layer_norm_impl(x, &gain, &bias, eps);
}

/// Layer norm without the affine part (used under feature modulation).
template <class T>
Var<T> layer_norm(Var<T> x, T eps = T(1e-6)) {
  return detail::layer_norm_impl<T>(x, nullptr, nullptr, eps);
}

/// out[i] = x[rows[i]].
template <class T>
Var<T> gather_rows(Var<T> x, const Index& rows) {
  const auto& X = x.value();
  const std::size_t n = X.cols();
  const std::size_t nr = X.rows();
  if (rows.empty()) throw DimensionError("gather_rows: empty index");
  Tensor<T> out({rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= nr)
      throw IndexError("gather_rows: index " + std::to_string(rows[i]) + " out of range for " +
                       std::to_string(nr) + " rows");
    std::copy_n(X.data() + rows[i] * n, n, out.data() + i * n);
  }
  return x.graph->record(std::move(out), {x}, [ix = x.id, rows, n](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad_buffer(self);
    auto& gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < n; ++c) gx[rows[i] * n + c] += d[i * n + c];
  });
}

/// Row j of the result is the mean of the message rows whose target is j;
/// targets that receive no message produce a zero row.
template <class T>
Var<T> scatter_mean(Var<T> messages, const Index& targets, std::size_t n_out) {
  const auto& M = messages.value();
  const std::size_t n = M.cols();
  if (targets.size() != M.rows())
    throw DimensionError("scatter_mean: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(M.rows()) + " messages");
  if (n_out == 0) throw DimensionError("scatter_mean: n_out must be positive");
  std::vector<T> inv_count(n_out, T(0));
  for (auto t : targets) {
    if (t >= n_out) throw IndexError("scatter_mean: target " + std::to_string(t) + " >= " + std::to_string(n_out));
    inv_count[t] += T(1);
  }
  for (auto& c : inv_count) c = c > 0 ? T(1) / c : T(0);
  Tensor<T> out({n_out, n});
  for (std::size_t e = 0; e < targets.size(); ++e)
    for (std::size_t c = 0; c < n; ++c) out[targets[e] * n + c] += M[e * n + c];
  for (std::size_t j = 0; j < n_out; ++j)
    for (std::size_t c = 0; c < n; ++c) out[j * n + c] *= inv_count[j];
  return messages.graph->record(
      std::move(out), {messages},
      [im = messages.id, targets, n, inv_count = std::move(inv_count)](Graph<T>& g, std::size_t self) {
        const auto& d = g.grad_buffer(self);
        auto& gm = g.grad_buffer(im);
        for (std::size_t e = 0; e < targets.size(); ++e) {
          const T w = inv_count[targets[e]];
          for (std::size_t c = 0; c < n; ++c) gm[e * n + c] += w * d[targets[e] * n + c];
        }
      });
}

/// Concatenate along the last axis; all parts share the same row count.
template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_same_graph(parts[0], p);
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    total += p.cols();
  }
  Tensor<T> out({rows, total});
  std::vector<std::size_t> offsets, widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& P = p.value();
    const std::size_t w = P.cols();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(P.data() + r * w, w, out.data() + r * total + off);
    offsets.push_back(off);
    widths.push_back(w);
    off += w;
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id);
  return parts[0].graph->record(
      std::move(out), parts, [ids, offsets, widths, rows, total](Graph<T>& g, std::size_t self) {
        const auto& d = g.grad_buffer(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!g.requires_grad(ids[k])) continue;
          auto& gp = g.grad_buffer(ids[k]);
          const std::size_t w = widths[k];
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += d[r * total + offsets[k] + c];
        }
      });
}

/// Concatenate along rows; all parts share the same column count.
template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_same_graph(parts[0], p);
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    total += p.rows();
  }
  Tensor<T> out({total, cols});
  std::vector<std::size_t> offsets, ids;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& P = p.value();
    std::copy(P.storage().begin(), P.storage().end(), out.data() + off * cols);
    offsets.push_back(off);
    ids.push_back(p.id);
    off += P.rows();
  }
  return parts[0].graph->record(std::move(out), parts, [ids, offsets, cols](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad_buffer(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!g.requires_grad(ids[k])) continue;
      auto& gp = g.grad_buffer(ids[k]);
      const T* src = d.data() + offsets[k] * cols;
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
    }
  });
}

/// Columns [start, start + width) of x.
template <class T>
Var<T> slice_cols(Var<T> x, std::size_t start, std::size_t width) {
  const auto& X = x.value();
  const std::size_t n = X.cols();
  if (width == 0 || start + width > n)
    throw IndexError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + width) +
                     ") out of range for " + std::to_string(n) + " columns");
  const std::size_t rows = X.rows();
  Tensor<T> out({rows, width});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(X.data() + r * n + start, width, out.data() + r * width);
  return x.graph->record(std::move(out), {x}, [ix = x.id, start, width, n, rows](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad_buffer(self);
    auto& gx = g.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < width; ++c) gx[r * n + start + c] += d[r * width + c];
  });
}

template <class T>
Var<T> sum(Var<T> x) {
  T s = 0;
  for (auto v : x.value().values()) s += v;
  return x.graph->record(Tensor<T>({1}, {s}), {x}, [ix = x.id](Graph<T>& g, std::size_t self) {
    const T d = g.grad_buffer(self)[0];
    auto& gx = g.grad_buffer(ix);
    for (auto& v : gx.values()) v += d;
  });
}

/// Mean over all entries of (pred - target)^2.
template <class T>
Var<T> mse(Var<T> pred, Var<T> target) {
  detail::require_same_graph(pred, target);
  if (pred.value().size() != target.value().size() || pred.cols() != target.cols())
    throw DimensionError("mse: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  const auto& P = pred.value();
  const auto& Q = target.value();
  T s = 0;
  for (std::size_t i = 0; i < P.size(); ++i) s += (P[i] - Q[i]) * (P[i] - Q[i]);
  const T inv_n = T(1) / T(P.size());
  return pred.graph->record(Tensor<T>({1}, {s * inv_n}), {pred, target},
                            [ip = pred.id, it = target.id, inv_n](Graph<T>& g, std::size_t self) {
                              const T d = g.grad_buffer(self)[0];
                              const auto& P = g.value(ip);
                              const auto& Q = g.value(it);
                              const T c = T(2) * inv_n * d;
                              if (g.requires_grad(ip)) {
                                auto& gp = g.grad_buffer(ip);
                                for (std::size_t i = 0; i < P.size(); ++i) gp[i] += c * (P[i] - Q[i]);
                              }
                              if (g.requires_grad(it)) {
                                auto& gt = g.grad_buffer(it);
                                for (std::size_t i = 0; i < P.size(); ++i) gt[i] -= c * (P[i] - Q[i]);
                              }
                            });
}

/// Weighted sum of scalar nodes.
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  if (terms.empty() || terms.size() != weights.size()) throw DimensionError("weighted_sum: arity mismatch");
  T s = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().size() != 1) throw DimensionError("weighted_sum: terms must be scalars");
    s += weights[i] * terms[i].value()[0];
  }
  std::vector<std::size_t> ids;
  for (const auto& t : terms) ids.push_back(t.id);
  return terms[0].graph->record(Tensor<T>({1}, {s}), terms, [ids, weights](Graph<T>& g, std::size_t self) {
    const T d = g.grad_buffer(self)[0];
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (g.requires_grad(ids[i])) g.grad_buffer(ids[i])[0] += weights[i] * d;
  });
}

}  // namespace upt
