#pragma once

// Attention, pre-norm transformer blocks and perceiver cross-attention blocks
// with DiT-style feature modulation.
//
// Under a condition vector c, a block predicts per-dimension (scale, shift,
// gate) triples from c with a zero-initialized linear projection and computes
//   x + gate * f(LN(x) * (1 + scale) + shift)
// for each residual branch f. Zero initialization makes every conditioned
// block the identity map until training moves the gates. Without a
// condition, the norms carry their own affine parameters and gates are 1.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "upt/layers.hpp"

namespace upt {

constexpr std::size_t kMlpRatio = 4;

template <class T>
Var<T> modulate(Var<T> x, Var<T> scale, Var<T> shift) {
  return add_row(mul_row(x, add_scalar(scale, T(1))), shift);
}

/// Multi-head scaled dot-product attention. Query rows never interact, so
/// output row i depends only on query row i and the full key/value set.
template <class T>
struct Attention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1;
  std::size_t dim = 0;

  static Attention make(ParameterSet<T>& ps, const std::string& name, std::size_t q_dim, std::size_t kv_dim,
                        std::size_t dim, std::size_t heads, Rng& rng) {
    if (heads == 0 || dim % heads != 0)
      throw ValueError(name + ": dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                       " heads");
    Attention a;
    a.heads = heads;
    a.dim = dim;
    a.q = Linear<T>::make(ps, name + ".q", q_dim, dim, rng);
    a.k = Linear<T>::make(ps, name + ".k", kv_dim, dim, rng);
    a.v = Linear<T>::make(ps, name + ".v", kv_dim, dim, rng);
    a.o = Linear<T>::make(ps, name + ".o", dim, q_dim, rng);
    return a;
  }

  Var<T> operator()(Graph<T>& g, Var<T> query, Var<T> context) const {
    if (query.cols() != q.in() || context.cols() != k.in())
      throw DimensionError("attention: got query " + shape_str(query.shape()) + " and context " +
                           shape_str(context.shape()) + ", expected widths " + std::to_string(q.in()) + "/" +
                           std::to_string(k.in()));
    const std::size_t hd = dim / heads;
    const T inv_sqrt = T(1) / std::sqrt(T(hd));
    auto Q = scale(q(g, query), inv_sqrt);
    auto K = k(g, context);
    auto V = v(g, context);
    if (heads == 1) return o(g, matmul(softmax(matmul(Q, K, true)), V));
    std::vector<Var<T>> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      auto qh = slice_cols(Q, h * hd, hd);
      auto kh = slice_cols(K, h * hd, hd);
      auto vh = slice_cols(V, h * hd, hd);
      outs.push_back(matmul(softmax(matmul(qh, kh, true)), vh));
    }
    return o(g, concat_cols(outs));
  }
};

/// Splits a 1 x (n * width) modulation vector into n rows of `width`.
template <class T>
std::vector<Var<T>> split_chunks(Var<T> m, const std::vector<std::size_t>& widths) {
  std::vector<Var<T>> out;
  std::size_t off = 0;
  for (auto w : widths) {
    out.push_back(slice_cols(m, off, w));
    off += w;
  }
  return out;
}

/// Pre-norm self-attention + MLP block, optionally modulated by a condition.
template <class T>
struct TransformerBlock {
  std::size_t dim = 0;
  bool conditioned = false;
  Norm<T> norm1, norm2;
  Attention<T> attn;
  Mlp<T> mlp;
  Linear<T> modulation;  // cond_dim -> 6 * dim, zero-initialized

  static TransformerBlock make(ParameterSet<T>& ps, const std::string& name, std::size_t dim, std::size_t heads,
                               std::size_t cond_dim, Rng& rng) {
    TransformerBlock b;
    b.dim = dim;
    b.conditioned = cond_dim > 0;
    b.norm1 = Norm<T>::make(ps, name + ".norm1", dim, !b.conditioned);
    b.attn = Attention<T>::make(ps, name + ".attn", dim, dim, dim, heads, rng);
    b.norm2 = Norm<T>::make(ps, name + ".norm2", dim, !b.conditioned);
    b.mlp = Mlp<T>::make(ps, name + ".mlp", dim, kMlpRatio * dim, dim, rng);
    if (b.conditioned) b.modulation = Linear<T>::make(ps, name + ".modulation", cond_dim, 6 * dim, rng, Init::kZero);
    return b;
  }

  Var<T> operator()(Graph<T>& g, Var<T> x, std::optional<Var<T>> cond) const {
    if (!conditioned) {
      auto h = norm1(g, x);
      x = add(x, attn(g, h, h));
      return add(x, mlp(g, norm2(g, x)));
    }
    if (!cond) throw ValueError("conditioned transformer block called without a condition");
    auto m = split_chunks(modulation(g, *cond), std::vector<std::size_t>(6, dim));
    auto h = modulate(norm1(g, x), m[0], m[1]);
    x = add(x, mul_row(attn(g, h, h), m[2]));
    h = modulate(norm2(g, x), m[3], m[4]);
    return add(x, mul_row(mlp(g, h), m[5]));
  }
};

/// Cross-attention from a query set to a context set followed by an MLP, both
/// residual on the query path. Queries and context are normalized and
/// modulated separately.
template <class T>
struct PerceiverBlock {
  std::size_t q_dim = 0;
  std::size_t kv_dim = 0;
  bool conditioned = false;
  Norm<T> norm_q, norm_kv, norm_mlp;
  Attention<T> attn;
  Mlp<T> mlp;
  Linear<T> modulation;  // cond_dim -> 6 * q_dim + 2 * kv_dim, zero-initialized

  static PerceiverBlock make(ParameterSet<T>& ps, const std::string& name, std::size_t q_dim, std::size_t kv_dim,
                             std::size_t heads, std::size_t cond_dim, Rng& rng) {
    PerceiverBlock b;
    b.q_dim = q_dim;
    b.kv_dim = kv_dim;
    b.conditioned = cond_dim > 0;
    b.norm_q = Norm<T>::make(ps, name + ".norm_q", q_dim, !b.conditioned);
    b.norm_kv = Norm<T>::make(ps, name + ".norm_kv", kv_dim, !b.conditioned);
    b.attn = Attention<T>::make(ps, name + ".attn", q_dim, kv_dim, q_dim, heads, rng);
    b.norm_mlp = Norm<T>::make(ps, name + ".norm_mlp", q_dim, !b.conditioned);
    b.mlp = Mlp<T>::make(ps, name + ".mlp", q_dim, kMlpRatio * q_dim, q_dim, rng);
    if (b.conditioned)
      b.modulation = Linear<T>::make(ps, name + ".modulation", cond_dim, 6 * q_dim + 2 * kv_dim, rng, Init::kZero);
    return b;
  }

  Var<T> operator()(Graph<T>& g, Var<T> queries, Var<T> context, std::optional<Var<T>> cond) const {
    if (!conditioned) {
      queries = add(queries, attn(g, norm_q(g, queries), norm_kv(g, context)));
      return add(queries, mlp(g, norm_mlp(g, queries)));
    }
    if (!cond) throw ValueError("conditioned perceiver block called without a condition");
    // q: scale, shift, gate | kv: scale, shift | mlp: scale, shift, gate
    auto m = split_chunks(modulation(g, *cond), {q_dim, q_dim, q_dim, kv_dim, kv_dim, q_dim, q_dim, q_dim});
    auto q = modulate(norm_q(g, queries), m[0], m[1]);
    auto kv = modulate(norm_kv(g, context), m[3], m[4]);
    queries = add(queries, mul_row(attn(g, q, kv), m[2]));
    auto h = modulate(norm_mlp(g, queries), m[5], m[6]);
    return add(queries, mul_row(mlp(g, h), m[7]));
  }
};

}  // namespace upt
