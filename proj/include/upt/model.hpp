#pragma once

// Universal Physics Transformer: encoder -> latent approximator -> decoder.
//
//   encode:      features + positions  -> supernode messages -> transformer
//                -> perceiver pooling onto n_latent learned queries
//   approximate: n_latent x h -> n_latent x h (transformer), one time step
//   decode:      latent + query positions -> perceiver cross-attention
//                -> per-query output features
//
// Positions handed to the model are already rescaled into [0, 200].

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "upt/blocks.hpp"
#include "upt/embedding.hpp"
#include "upt/geometry.hpp"

namespace upt {

struct UptConfig {
  std::size_t dim = 2;           // spatial dimensions
  std::size_t in_channels = 2;   // input feature channels
  std::size_t out_channels = 2;  // decoded feature channels
  std::size_t enc_dim = 96;
  std::size_t latent_dim = 192;
  std::size_t n_supernodes = 256;
  std::size_t n_latent = 128;
  double radius = 5.0;  // in rescaled [0, 200] units
  std::size_t max_degree = 32;
  std::size_t enc_blocks = 4;
  std::size_t app_blocks = 4;
  std::size_t dec_blocks = 0;
  std::size_t enc_heads = 2;
  std::size_t enc_perceiver_heads = 3;
  std::size_t app_heads = 3;
  std::size_t dec_heads = 3;
  std::size_t cond_dim = 192;
  std::size_t cond_embed_dim = 64;
  std::vector<ConditionSpec> conditions;  // empty: unconditioned model
  bool all_points_supernodes = false;
  std::uint64_t init_seed = 0;

  bool conditioned() const { return !conditions.empty() && cond_dim > 0; }

  void validate() const {
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw ValueError("invalid model config: " + msg);
    };
    need(dim >= 1, "dim must be >= 1");
    need(in_channels >= 1 && out_channels >= 1, "channel counts must be >= 1");
    need(enc_dim % (2 * dim) == 0, "enc_dim must be divisible by 2*dim");
    need(latent_dim % (2 * dim) == 0, "latent_dim must be divisible by 2*dim");
    need(n_latent >= 1, "n_latent must be >= 1");
    need(all_points_supernodes || n_supernodes >= 1, "n_supernodes must be >= 1");
    need(radius > 0, "radius must be positive");
    need(max_degree >= 1, "max_degree must be >= 1");
    need(enc_heads >= 1 && enc_dim % enc_heads == 0, "enc_dim must be divisible by enc_heads");
    need(app_heads >= 1 && latent_dim % app_heads == 0, "latent_dim must be divisible by app_heads");
    need(enc_perceiver_heads >= 1 && latent_dim % enc_perceiver_heads == 0,
         "latent_dim must be divisible by enc_perceiver_heads");
    need(dec_heads >= 1 && latent_dim % dec_heads == 0, "latent_dim must be divisible by dec_heads");
    need(conditions.empty() || (cond_dim > 0 && cond_embed_dim % 2 == 0),
         "conditioned models need cond_dim > 0 and an even cond_embed_dim");
    for (const auto& c : conditions) need(c.bounds.hi > c.bounds.lo, "condition '" + c.name + "' has empty bounds");
  }

  /// Desk-scale default matching the Lagrangian 2D architecture.
  static UptConfig desk() { return UptConfig{}; }

  /// Small configuration used by unit tests and gradient checks.
  static UptConfig smoke() {
    UptConfig c;
    c.enc_dim = 16;
    c.latent_dim = 32;
    c.n_supernodes = 32;
    c.n_latent = 16;
    c.enc_blocks = 1;
    c.app_blocks = 1;
    c.dec_blocks = 1;
    c.enc_heads = 2;
    c.enc_perceiver_heads = 2;
    c.app_heads = 2;
    c.dec_heads = 2;
    c.cond_dim = 16;
    c.cond_embed_dim = 8;
    c.conditions = {{"time", {0.0, 1.0}}};
    return c;
  }
};

inline void to_json(nlohmann::json& j, const ConditionSpec& c) {
  j = nlohmann::json{{"name", c.name}, {"lo", c.bounds.lo}, {"hi", c.bounds.hi}};
}

inline void from_json(const nlohmann::json& j, ConditionSpec& c) {
  c.name = j.at("name").get<std::string>();
  c.bounds.lo = j.at("lo").get<double>();
  c.bounds.hi = j.at("hi").get<double>();
}

#define UPT_CONFIG_FIELDS(X)                                                                                   \
  X(dim) X(in_channels) X(out_channels) X(enc_dim) X(latent_dim) X(n_supernodes) X(n_latent) X(radius)      \
  X(max_degree) X(enc_blocks) X(app_blocks) X(dec_blocks) X(enc_heads) X(enc_perceiver_heads) X(app_heads) \
  X(dec_heads) X(cond_dim) X(cond_embed_dim) X(conditions) X(all_points_supernodes) X(init_seed)

inline void to_json(nlohmann::json& j, const UptConfig& c) {
  j = nlohmann::json::object();
#define X(f) j[#f] = c.f;
  UPT_CONFIG_FIELDS(X)
#undef X
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, UptConfig& c) {
  static const std::vector<std::string> known = {
#define X(f) #f,
      UPT_CONFIG_FIELDS(X)
#undef X
  };
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ValueError("unknown model config key '" + it.key() + "'");
#define X(f) \
  if (j.contains(#f)) j.at(#f).get_to(c.f);
  UPT_CONFIG_FIELDS(X)
#undef X
}

/// Latent state detached from any graph, tagged with its physical time.
template <class T>
struct Latent {
  Tensor<T> tokens;  // n_latent x latent_dim
  double time = 0.0;
};

template <class T>
class UptModel {
 public:
  explicit UptModel(UptConfig config) : config_(std::move(config)) {
    config_.validate();
    Rng rng(config_.init_seed);
    const auto& c = config_;
    const std::size_t cd = c.conditioned() ? c.cond_dim : 0;
    if (c.conditioned()) cond_ = ConditionEmbedder<T>::make(params_, "condition", c.conditions, c.cond_embed_dim, cd, rng);
    input_embed_ = Linear<T>::make(params_, "encoder.input_embed", c.in_channels, c.enc_dim, rng);
    message_mlp_ = Mlp<T>::make(params_, "encoder.message_mlp", c.enc_dim, c.enc_dim, c.enc_dim, rng);
    for (std::size_t i = 0; i < c.enc_blocks; ++i)
      enc_blocks_.push_back(TransformerBlock<T>::make(params_, "encoder.blocks." + std::to_string(i), c.enc_dim,
                                                      c.enc_heads, cd, rng));
    latent_queries_ =
        &params_.add("encoder.latent_queries", init_tensor<T>({c.n_latent, c.latent_dim}, Init::kNormal002, rng));
    enc_perceiver_ = PerceiverBlock<T>::make(params_, "encoder.perceiver", c.latent_dim, c.enc_dim,
                                             c.enc_perceiver_heads, cd, rng);
    for (std::size_t i = 0; i < c.app_blocks; ++i)
      app_blocks_.push_back(TransformerBlock<T>::make(params_, "approximator.blocks." + std::to_string(i),
                                                      c.latent_dim, c.app_heads, cd, rng));
    for (std::size_t i = 0; i < c.dec_blocks; ++i)
      dec_blocks_.push_back(TransformerBlock<T>::make(params_, "decoder.blocks." + std::to_string(i), c.latent_dim,
                                                      c.app_heads, cd, rng));
    query_mlp_ = Mlp<T>::make(params_, "decoder.query_mlp", c.latent_dim, c.latent_dim, c.latent_dim, rng);
    dec_perceiver_ =
        PerceiverBlock<T>::make(params_, "decoder.perceiver", c.latent_dim, c.latent_dim, c.dec_heads, cd, rng);
    out_norm_ = Norm<T>::make(params_, "decoder.out_norm", c.latent_dim, true);
    out_head_ = Linear<T>::make(params_, "decoder.out_head", c.latent_dim, c.out_channels, rng);
  }

  UptModel(const UptModel&) = delete;
  UptModel& operator=(const UptModel&) = delete;

  const UptConfig& config() const { return config_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

  /// Number of encode() calls since construction (instrumentation).
  std::size_t encode_count() const { return encode_calls_.load(); }

  /// Condition vector (1 x cond_dim), or nothing for unconditioned models.
  std::optional<Var<T>> condition(Graph<T>& g, double time, const std::map<std::string, double>& scalars) const {
    if (!config_.conditioned()) return std::nullopt;
    auto all = scalars;
    all["time"] = time;
    return cond_(g, all);
  }

  /// Graph for an input cloud: fresh supernodes + capped radius graph, or the
  /// identity graph when every point is its own supernode.
  SupernodeGraph make_graph(const Tensor<double>& positions, Rng& rng,
                            std::optional<std::size_t> n_supernodes = std::nullopt) const {
    if (config_.all_points_supernodes) return identity_graph(positions.rows());
    const std::size_t ns = n_supernodes.value_or(config_.n_supernodes);
    if (positions.rows() < ns)
      throw ValueError("encode: " + std::to_string(positions.rows()) + " input points but " + std::to_string(ns) +
                       " supernodes requested");
    auto idx = sample_supernodes(positions.rows(), ns, rng);
    return build_radius_graph(positions, idx, config_.radius, config_.max_degree, rng);
  }

  /// features: k x in_channels; positions: k x dim (rescaled).
  Var<T> encode(Graph<T>& g, Var<T> features, const Tensor<T>& positions, const SupernodeGraph& sg,
                std::optional<Var<T>> cond) const {
    ++encode_calls_;
    const auto& c = config_;
    if (features.cols() != c.in_channels || positions.cols() != c.dim || features.rows() != positions.rows())
      throw DimensionError("encode: features " + shape_str(features.shape()) + " / positions " +
                           shape_str(positions.shape()) + " do not match config");
    auto x = add(input_embed_(g, features), g.constant(sincos_embed(positions, c.enc_dim)));
    auto messages = gather_rows(message_mlp_(g, x), sg.edges_from);
    auto h = scatter_mean(messages, sg.edges_to, sg.num_supernodes());
    for (const auto& b : enc_blocks_) h = b(g, h, cond);
    return enc_perceiver_(g, g.param(*latent_queries_), h, cond);
  }

  Var<T> approximate(Graph<T>& g, Var<T> z, std::optional<Var<T>> cond) const {
    for (const auto& b : app_blocks_) z = b(g, z, cond);
    return z;
  }

  /// query_pos: k' x dim (rescaled). Returns k' x out_channels.
  Var<T> decode(Graph<T>& g, Var<T> z, const Tensor<T>& query_pos, std::optional<Var<T>> cond) const {
    if (query_pos.cols() != config_.dim) throw DimensionError("decode: query positions have wrong dimension");
    for (const auto& b : dec_blocks_) z = b(g, z, cond);
    auto q = query_mlp_(g, g.constant(sincos_embed(query_pos, config_.latent_dim)));
    auto y = dec_perceiver_(g, q, z, cond);
    return out_head_(g, out_norm_(g, y));
  }

 private:
  UptConfig config_;
  ParameterSet<T> params_;
  ConditionEmbedder<T> cond_;
  Linear<T> input_embed_;
  Mlp<T> message_mlp_;
  std::vector<TransformerBlock<T>> enc_blocks_;
  Parameter<T>* latent_queries_ = nullptr;
  PerceiverBlock<T> enc_perceiver_;
  std::vector<TransformerBlock<T>> app_blocks_;
  std::vector<TransformerBlock<T>> dec_blocks_;
  Mlp<T> query_mlp_;
  PerceiverBlock<T> dec_perceiver_;
  Norm<T> out_norm_;
  Linear<T> out_head_;
  mutable std::atomic<std::size_t> encode_calls_{0};
};

/// Inputs to one next-step prediction, all in model space.
template <class T>
struct StepInput {
  Tensor<T> positions;  // k x dim, rescaled
  Tensor<T> features;   // k x in_channels, normalized
  double time = 0.0;
  std::map<std::string, double> scalars;
};

template <class T>
struct Prediction {
  Tensor<T> output;  // k' x out_channels
  Latent<T> z_t;
  Latent<T> z_next;
};

/// encode -> approximate -> decode, advancing time by dt. The graph for the
/// input cloud is drawn from rng.
template <class T>
Prediction<T> predict_next(const UptModel<T>& model, const StepInput<T>& in, const Tensor<T>& query_pos, double dt,
                           Rng& rng) {
  Graph<T> g(false);
  auto sg = model.make_graph(in.positions.template cast<double>(), rng);
  auto cond_t = model.condition(g, in.time, in.scalars);
  auto z = model.encode(g, g.constant(in.features), in.positions, sg, cond_t);
  auto z_next = model.approximate(g, z, cond_t);
  auto cond_next = model.condition(g, in.time + dt, in.scalars);
  auto out = model.decode(g, z_next, query_pos, cond_next);
  return {out.value(), {z.value(), in.time}, {z_next.value(), in.time + dt}};
}

}  // namespace upt
