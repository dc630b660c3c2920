#pragma once

// The full finite-difference suite: every op, both block types, the model
// composition on the smoke config and the training objective.

#include <vector>

#include "upt/gradcheck.hpp"
#include "upt/train.hpp"

namespace upt {

inline std::vector<GradCheckResult> full_gradient_suite(double tol = 1e-4, std::uint64_t seed = 1) {
  auto out = op_gradient_suite(tol, seed);
  {
    ParameterSet<double> ps;
    Rng rng(seed + 10);
    auto block = TransformerBlock<double>::make(ps, "t", 8, 2, 6, rng);
    randomize_parameters(ps, seed + 11);
    auto x = random_tensor({4, 8}, rng);
    auto c = random_tensor({1, 6}, rng);
    out.push_back(check_param_gradients(
        "transformer_block", ps,
        [&](Graph<double>& g) { return random_projection(g, block(g, g.constant(x), g.constant(c)), 5); }, tol));
    out.push_back(check_input_gradients(
        "transformer_block_inputs", {x, c},
        [&](Graph<double>& g, const auto& v) { return random_projection(g, block(g, v[0], v[1]), 5); }, tol));
  }
  {
    ParameterSet<double> ps;
    Rng rng(seed + 20);
    auto block = PerceiverBlock<double>::make(ps, "p", 8, 4, 2, 6, rng);
    randomize_parameters(ps, seed + 21);
    auto q = random_tensor({3, 8}, rng), ctx = random_tensor({5, 4}, rng), c = random_tensor({1, 6}, rng);
    out.push_back(check_param_gradients(
        "perceiver_block", ps,
        [&](Graph<double>& g) {
          return random_projection(g, block(g, g.constant(q), g.constant(ctx), g.constant(c)), 3);
        },
        tol));
  }
  {
    auto c = UptConfig::smoke();
    c.radius = 40.0;
    c.n_supernodes = 8;
    c.n_latent = 4;
    UptModel<double> model(c);
    randomize_parameters(model.parameters(), seed + 30);
    Rng rng(seed + 31);
    const std::size_t k = 16;
    auto pos = random_tensor({k, 2}, rng, 0.0, 200.0);
    auto feat = random_tensor({k, c.in_channels}, rng);
    auto qpos = random_tensor({5, 2}, rng, 0.0, 200.0);
    auto sg = model.make_graph(pos, rng);
    out.push_back(check_param_gradients(
        "encode_approximate_decode", model.parameters(),
        [&](Graph<double>& g) {
          auto cond = model.condition(g, 0.3, {});
          auto z = model.approximate(g, model.encode(g, g.constant(feat), pos, sg, cond), cond);
          return random_projection(g, model.decode(g, z, qpos, model.condition(g, 0.4, {})), 21);
        },
        tol, 1e-6, 24));
    out.push_back(check_input_gradients(
        "encode_approximate_decode_inputs", {feat},
        [&](Graph<double>& g, const auto& v) {
          auto cond = model.condition(g, 0.3, {});
          auto z = model.approximate(g, model.encode(g, v[0], pos, sg, cond), cond);
          return random_projection(g, model.decode(g, z, qpos, model.condition(g, 0.4, {})), 21);
        },
        tol));
  }
  {
    // Training objective without the stop-gradient term.
    Rng rng(seed + 40);
    Dataset d;
    d.train.push_back(generate_diffusion2d(40, 4, 0.5, 0.005, 2, rng));
    const auto prep = compute_preprocessing(d.train, {});
    auto c = UptConfig::smoke();
    c.n_supernodes = 8;
    c.n_latent = 4;
    c.radius = 0;
    c.in_channels = c.out_channels = 0;
    c.conditions.clear();
    UptModel<double> model(resolve_model_config(c, d, prep));
    randomize_parameters(model.parameters(), seed + 41);
    TrainConfig cfg;
    cfg.queries = 10;
    cfg.inv_dec_queries = 12;
    cfg.weights = {1.0, 1.0, 0.0};
    const auto s = build_sample<double>(d.train[0], 1, prep, cfg, rng);
    out.push_back(check_param_gradients(
        "training_loss", model.parameters(),
        [&](Graph<double>& g) {
          Rng r(seed + 42);
          return sample_losses(g, model, s, cfg, r).total;
        },
        tol, 1e-6, 16));
  }
  return out;
}

}  // namespace upt
