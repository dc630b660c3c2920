#pragma once

// Sine-cosine embeddings of coordinates and of scalar conditions.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "upt/geometry.hpp"
#include "upt/layers.hpp"

namespace upt {

constexpr double kMaxWavelength = 10000.0;

/// Embeds each coordinate dimension separately into h / dim channels: the
/// first half are sines, the second half cosines, at frequencies
/// max_wavelength^(-i / half) for i = 0 .. half-1. Dimensions are concatenated
/// in order. Positions are expected in [0, 200].
template <class T>
Tensor<T> sincos_embed(const Tensor<T>& positions, std::size_t h, double max_wavelength = kMaxWavelength) {
  const std::size_t dim = positions.cols();
  if (dim == 0 || h % (2 * dim) != 0)
    throw ValueError("sincos_embed: hidden dim " + std::to_string(h) + " not divisible by 2*dim=" +
                     std::to_string(2 * dim));
  const std::size_t per_dim = h / dim;
  const std::size_t half = per_dim / 2;
  std::vector<double> omega(half);
  for (std::size_t i = 0; i < half; ++i)
    omega[i] = std::pow(max_wavelength, -static_cast<double>(i) / static_cast<double>(half));
  Tensor<T> out({positions.rows(), h});
  for (std::size_t r = 0; r < positions.rows(); ++r)
    for (std::size_t d = 0; d < dim; ++d) {
      const double x = positions(r, d);
      T* o = out.data() + r * h + d * per_dim;
      for (std::size_t i = 0; i < half; ++i) {
        o[i] = static_cast<T>(std::sin(x * omega[i]));
        o[half + i] = static_cast<T>(std::cos(x * omega[i]));
      }
    }
  return out;
}

/// A named scalar condition and the bounds used to rescale it onto [0, 200].
struct ConditionSpec {
  std::string name;
  Bounds bounds;
};

/// Embeds named scalars (each by 1-D sincos after rescaling) and mixes them
/// with a two-layer GELU MLP into a condition vector of size cond_dim.
template <class T>
struct ConditionEmbedder {
  std::vector<ConditionSpec> specs;
  std::size_t embed_dim = 0;
  std::size_t cond_dim = 0;
  Mlp<T> mlp;

  static ConditionEmbedder make(ParameterSet<T>& ps, const std::string& name, std::vector<ConditionSpec> specs,
                                std::size_t embed_dim, std::size_t cond_dim, Rng& rng) {
    if (embed_dim % 2 != 0) throw ValueError("condition embed dim must be even");
    ConditionEmbedder e;
    e.specs = std::move(specs);
    e.embed_dim = embed_dim;
    e.cond_dim = cond_dim;
    e.mlp = Mlp<T>::make(ps, name + ".mlp", e.specs.size() * embed_dim, cond_dim, cond_dim, rng);
    return e;
  }

  /// Raw (pre-MLP) embedding: 1 x (n_scalars * embed_dim).
  Tensor<T> embed_scalars(const std::map<std::string, double>& scalars) const {
    Tensor<T> out({1, specs.size() * embed_dim});
    for (std::size_t i = 0; i < specs.size(); ++i) {
      auto it = scalars.find(specs[i].name);
      if (it == scalars.end()) throw ValueError("missing condition scalar '" + specs[i].name + "'");
      Tensor<T> pos({1, 1});
      const auto& b = specs[i].bounds;
      pos[0] = static_cast<T>((it->second - b.lo) / (b.hi - b.lo) * kPositionScale);
      auto e = sincos_embed(pos, embed_dim);
      std::copy_n(e.data(), embed_dim, out.data() + i * embed_dim);
    }
    return out;
  }

  Var<T> operator()(Graph<T>& g, const std::map<std::string, double>& scalars) const {
    return mlp(g, g.constant(embed_scalars(scalars)));
  }
};

}  // namespace upt
