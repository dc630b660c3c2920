#pragma once

// Central finite-difference gradient checks. The numeric side only runs
// forward passes with gradients disabled, so it shares no code with the
// backward rules it verifies.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "upt/autodiff.hpp"
#include "upt/rng.hpp"

namespace upt {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  bool passed = false;
};

/// Error of one tensor's gradient: max |analytic - numeric| over the checked
/// entries, relative to the largest magnitude seen on either side. `floor`
/// bounds the denominator from below so tensors whose exact gradient is zero
/// (e.g. a key bias under softmax) are judged against the check's overall
/// gradient scale instead of their own rounding noise.
inline double gradient_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                 double floor = 1e-10) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / std::max({scale, floor, 1e-10});
}

/// Relative floor applied per tensor: a fraction of the largest gradient
/// magnitude over all tensors in one check.
inline constexpr double kGradFloorFraction = 1e-3;

namespace detail {

struct GradPairs {
  std::vector<std::vector<double>> analytic, numeric;

  void finish(GradCheckResult& res, double tol) const {
    double global = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i)
      for (std::size_t j = 0; j < analytic[i].size(); ++j)
        global = std::max({global, std::abs(analytic[i][j]), std::abs(numeric[i][j])});
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      res.max_rel_error =
          std::max(res.max_rel_error, gradient_rel_error(analytic[i], numeric[i], kGradFloorFraction * global));
      res.entries_checked += analytic[i].size();
    }
    res.passed = res.max_rel_error <= tol;
  }
};

}  // namespace detail

inline std::vector<std::size_t> pick_entries(std::size_t n, std::size_t max_entries, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (max_entries == 0 || max_entries >= n) return idx;
  rng.shuffle(idx);
  idx.resize(max_entries);
  std::sort(idx.begin(), idx.end());
  return idx;
}

using LossFn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

/// Checks d loss / d inputs for every input tensor.
inline GradCheckResult check_input_gradients(const std::string& name, std::vector<Tensor<double>> inputs,
                                             const LossFn& fn, double tol, double step = 1e-6,
                                             std::size_t max_entries = 0, std::uint64_t seed = 0) {
  GradCheckResult res{name};
  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(g.variable(t));
    auto loss = fn(g, vars);
    g.backward(loss);
    for (const auto& v : vars) analytic.push_back(g.grad(v));
  }
  auto eval = [&]() {
    Graph<double> g(false);
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(g.constant(t));
    return fn(g, vars).value()[0];
  };
  Rng rng(seed);
  detail::GradPairs pairs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<double> a, n;
    for (auto j : pick_entries(inputs[i].size(), max_entries, rng)) {
      const double x0 = inputs[i][j];
      inputs[i][j] = x0 + step;
      const double fp = eval();
      inputs[i][j] = x0 - step;
      const double fm = eval();
      inputs[i][j] = x0;
      a.push_back(analytic[i][j]);
      n.push_back((fp - fm) / (2 * step));
    }
    pairs.analytic.push_back(std::move(a));
    pairs.numeric.push_back(std::move(n));
  }
  pairs.finish(res, tol);
  return res;
}

/// Checks d loss / d parameter for every parameter in the set. The loss
/// function must be deterministic (fix any graph sampling outside it).
inline GradCheckResult check_param_gradients(const std::string& name, ParameterSet<double>& params,
                                             const std::function<Var<double>(Graph<double>&)>& fn, double tol,
                                             double step = 1e-6, std::size_t max_entries = 0,
                                             std::uint64_t seed = 0) {
  GradCheckResult res{name};
  params.zero_grad();
  {
    Graph<double> g;
    auto loss = fn(g);
    g.backward(loss);
    g.accumulate_param_grads();
  }
  auto eval = [&]() {
    Graph<double> g(false);
    return fn(g).value()[0];
  };
  Rng rng(seed);
  detail::GradPairs pairs;
  for (auto& p : params) {
    std::vector<double> a, n;
    for (auto j : pick_entries(p->value.size(), max_entries, rng)) {
      const double x0 = p->value[j];
      p->value[j] = x0 + step;
      const double fp = eval();
      p->value[j] = x0 - step;
      const double fm = eval();
      p->value[j] = x0;
      a.push_back(p->grad[j]);
      n.push_back((fp - fm) / (2 * step));
    }
    pairs.analytic.push_back(std::move(a));
    pairs.numeric.push_back(std::move(n));
  }
  pairs.finish(res, tol);
  return res;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Replaces every parameter by a random value so that zero-initialized
/// gates and projections do not hide gradient paths. Norm gains stay near 1.
template <class T>
void randomize_parameters(ParameterSet<T>& ps, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for (auto& p : ps) {
    const double base = p->name.ends_with(".gain") ? 1.0 : 0.0;
    for (auto& v : p->value.values()) v = static_cast<T>(base + rng.uniform(-scale, scale));
  }
}

/// Projects an op output onto fixed random weights so every output entry
/// contributes a distinct amount to the scalar under test.
inline Var<double> random_projection(Graph<double>& g, Var<double> y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, g.constant(random_tensor(y.shape(), rng))));
}

/// Finite-difference checks of every differentiable op in the engine.
inline std::vector<GradCheckResult> op_gradient_suite(double tol = 1e-5, std::uint64_t seed = 1) {
  Rng rng(seed);
  std::vector<GradCheckResult> out;
  auto run = [&](const std::string& name, std::vector<Tensor<double>> inputs, LossFn fn) {
    out.push_back(check_input_gradients(name, std::move(inputs), fn, tol));
  };
  auto proj = [](Graph<double>& g, Var<double> y) { return random_projection(g, y, 99); };
  run("matmul", {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
      [&](auto& g, const auto& v) { return proj(g, matmul(v[0], v[1])); });
  run("matmul_transposed", {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)},
      [&](auto& g, const auto& v) { return proj(g, matmul(v[0], v[1], true)); });
  run("softmax", {random_tensor({2, 5}, rng, -2, 2)}, [&](auto& g, const auto& v) { return proj(g, softmax(v[0])); });
  run("layer_norm", {random_tensor({3, 6}, rng, -2, 2), random_tensor({6}, rng), random_tensor({6}, rng)},
      [&](auto& g, const auto& v) { return proj(g, layer_norm(v[0], v[1], v[2], 1e-6)); });
  run("gelu", {random_tensor({4, 3}, rng, -3, 3)}, [&](auto& g, const auto& v) { return proj(g, gelu(v[0])); });
  run("add", {random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)},
      [&](auto& g, const auto& v) { return proj(g, add(v[0], v[1])); });
  run("sub", {random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)},
      [&](auto& g, const auto& v) { return proj(g, sub(v[0], v[1])); });
  run("add_scalar", {random_tensor({3, 2}, rng)},
      [&](auto& g, const auto& v) { return proj(g, add_scalar(v[0], 0.3)); });
  run("mul", {random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)},
      [&](auto& g, const auto& v) { return proj(g, mul(v[0], v[1])); });
  run("scale", {random_tensor({3, 2}, rng)}, [&](auto& g, const auto& v) { return proj(g, scale(v[0], 0.7)); });
  run("add_row", {random_tensor({4, 3}, rng), random_tensor({3}, rng)},
      [&](auto& g, const auto& v) { return proj(g, add_row(v[0], v[1])); });
  run("mul_row", {random_tensor({4, 3}, rng), random_tensor({3}, rng)},
      [&](auto& g, const auto& v) { return proj(g, mul_row(v[0], v[1])); });
  run("gather_rows", {random_tensor({4, 3}, rng)},
      [&](auto& g, const auto& v) { return proj(g, gather_rows(v[0], {2, 0, 2, 3})); });
  run("concat_cols", {random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)},
      [&](auto& g, const auto& v) { return proj(g, concat_cols<double>({v[0], v[1]})); });
  run("concat_rows", {random_tensor({2, 3}, rng), random_tensor({1, 3}, rng)},
      [&](auto& g, const auto& v) { return proj(g, concat_rows<double>({v[0], v[1]})); });
  run("slice_cols", {random_tensor({3, 5}, rng)},
      [&](auto& g, const auto& v) { return proj(g, slice_cols(v[0], 1, 3)); });
  run("scatter_mean", {random_tensor({6, 2}, rng)},
      [&](auto& g, const auto& v) { return proj(g, scatter_mean(v[0], {0, 2, 0, 1, 0, 2}, 4)); });
  run("mse", {random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)},
      [&](auto&, const auto& v) { return mse(v[0], v[1]); });
  run("sum", {random_tensor({3, 4}, rng)}, [&](auto&, const auto& v) { return sum(v[0]); });
  run("weighted_sum", {random_tensor({3, 2}, rng), random_tensor({2, 2}, rng)}, [&](auto&, const auto& v) {
    return weighted_sum<double>({sum(v[0]), sum(mul(v[1], v[1]))}, {0.7, 1.9});
  });
  return out;
}

}  // namespace upt
