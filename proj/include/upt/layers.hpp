#pragma once

#include <cmath>
#include <string>

#include "upt/autodiff.hpp"
#include "upt/rng.hpp"

namespace upt {

enum class Init { kXavier, kZero, kNormal002 };

template <class T>
Tensor<T> init_tensor(Shape shape, Init init, Rng& rng) {
  Tensor<T> t(shape);
  switch (init) {
    case Init::kZero:
      break;
    case Init::kXavier: {
      const double fan_in = static_cast<double>(shape.size() > 1 ? shape[0] : 1);
      const double fan_out = static_cast<double>(shape.back());
      const double a = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-a, a));
      break;
    }
    case Init::kNormal002:
      for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, 0.02));
      break;
  }
  return t;
}

/// y = x W + b with W stored as in x out.
template <class T>
struct Linear {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;

  static Linear make(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                     Init init = Init::kXavier, bool with_bias = true) {
    Linear l;
    l.weight = &ps.add(name + ".weight", init_tensor<T>({in, out}, init, rng));
    if (with_bias) l.bias = &ps.add(name + ".bias", Tensor<T>({out}));
    return l;
  }

  std::size_t in() const { return weight->value.shape()[0]; }
  std::size_t out() const { return weight->value.shape()[1]; }

  Var<T> operator()(Graph<T>& g, Var<T> x) const {
    auto y = matmul(x, g.param(*weight));
    return bias ? add_row(y, g.param(*bias)) : y;
  }
};

/// Two linear layers with a GELU in between.
template <class T>
struct Mlp {
  Linear<T> fc1, fc2;

  static Mlp make(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                  Rng& rng) {
    return {Linear<T>::make(ps, name + ".fc1", in, hidden, rng), Linear<T>::make(ps, name + ".fc2", hidden, out, rng)};
  }

  Var<T> operator()(Graph<T>& g, Var<T> x) const { return fc2(g, gelu(fc1(g, x))); }
};

/// LayerNorm with optional learned gain/bias.
template <class T>
struct Norm {
  Parameter<T>* gain = nullptr;
  Parameter<T>* bias = nullptr;
  T eps = T(1e-6);

  static Norm make(ParameterSet<T>& ps, const std::string& name, std::size_t dim, bool affine) {
    Norm n;
    if (affine) {
      n.gain = &ps.add(name + ".gain", Tensor<T>({dim}, T(1)));
      n.bias = &ps.add(name + ".bias", Tensor<T>({dim}));
    }
    return n;
  }

  Var<T> operator()(Graph<T>& g, Var<T> x) const {
    if (gain) return layer_norm(x, g.param(*gain), g.param(*bias), eps);
    return layer_norm(x, eps);
  }
};

}  // namespace upt
