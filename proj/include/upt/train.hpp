#pragma once

// Sample assembly, the three-term objective (next step, inverse decoding,
// inverse encoding), one-step evaluation, checkpoints and the epoch loop.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "upt/container.hpp"
#include "upt/datagen.hpp"
#include "upt/model.hpp"
#include "upt/normalize.hpp"
#include "upt/optim.hpp"

namespace upt {

/// How frames become model inputs and targets. Inputs concatenate the
/// features of frames t-history+1..t, targets those of t'-history+1..t'
/// with t' = t + delta_frames.
struct TaskSpec {
  std::size_t history = 1;
  std::size_t delta_frames = 1;
  bool log_scale = false;
  bool lagrangian = false;  // positions move with the material; no autoregressive rollout

  void validate() const {
    if (history < 1) throw ValueError("task.history must be >= 1");
    if (delta_frames < 1) throw ValueError("task.delta_frames must be >= 1");
  }
  std::size_t first_input_frame() const { return history - 1; }
  /// Number of valid input frame indices t in a trajectory of n frames.
  std::size_t valid_starts(std::size_t n) const {
    return n >= history + delta_frames ? n - history - delta_frames + 1 : 0;
  }
};

inline void to_json(nlohmann::json& j, const TaskSpec& t) {
  j = {{"history", t.history}, {"delta_frames", t.delta_frames}, {"log_scale", t.log_scale},
       {"lagrangian", t.lagrangian}};
}
inline void from_json(const nlohmann::json& j, TaskSpec& t) {
  t.history = j.value("history", t.history);
  t.delta_frames = j.value("delta_frames", t.delta_frames);
  t.log_scale = j.value("log_scale", t.log_scale);
  t.lagrangian = j.value("lagrangian", t.lagrangian);
}

struct LossWeights {
  double next = 1.0;
  double inv_dec = 1.0;
  double inv_enc = 1.0;
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  std::size_t warmup_epochs = 10;
  double lr = 1e-3;
  double weight_decay = 0.05;
  std::uint64_t seed = 0;
  std::size_t queries = 2048;          // k' target positions per sample
  std::size_t inv_dec_queries = 0;     // inverse-decoding positions, 0 = every input point
  double subsample_lo = 0.5;           // input point fraction range
  double subsample_hi = 1.0;
  LossWeights weights;
  bool inverse_losses = true;
  std::size_t samples_per_trajectory = 1;  // samples drawn per train trajectory per epoch

  void validate() const {
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw ValueError("invalid train config: " + msg);
    };
    need(epochs >= 1, "epochs must be >= 1");
    need(batch_size >= 1, "batch_size must be >= 1");
    need(warmup_epochs <= epochs, "warmup_epochs must not exceed epochs");
    need(lr > 0, "lr must be positive");
    need(weight_decay >= 0, "weight_decay must be >= 0");
    need(queries >= 1, "queries must be >= 1");
    need(subsample_lo > 0 && subsample_lo <= subsample_hi && subsample_hi <= 1, "need 0 < subsample_lo <= subsample_hi <= 1");
    need(weights.next >= 0 && weights.inv_dec >= 0 && weights.inv_enc >= 0, "loss weights must be >= 0");
    need(samples_per_trajectory >= 1, "samples_per_trajectory must be >= 1");
  }
};

/// Everything needed to map raw frames into model space.
struct Preprocessing {
  TaskSpec task;
  NormStats norm;  // per raw feature channel
  std::vector<Bounds> bounds;

  Tensor<double> positions(const Tensor<double>& raw) const { return rescale_positions(raw, bounds, kPositionScale); }
};

inline void to_json(nlohmann::json& j, const Preprocessing& p) {
  auto b = nlohmann::json::array();
  for (const auto& d : p.bounds) b.push_back({d.lo, d.hi});
  j = {{"task", p.task}, {"norm", p.norm}, {"bounds", b}};
}
inline void from_json(const nlohmann::json& j, Preprocessing& p) {
  j.at("task").get_to(p.task);
  j.at("norm").get_to(p.norm);
  p.bounds.clear();
  for (const auto& d : j.at("bounds")) p.bounds.push_back({d.at(0).get<double>(), d.at(1).get<double>()});
}

struct Dataset {
  std::vector<Trajectory> train, val, test;
};

/// Robust statistics over the training features (rows strided so at most
/// ~max_rows samples are used) and domain bounds from the first trajectory.
inline Preprocessing compute_preprocessing(const std::vector<Trajectory>& train, const TaskSpec& task,
                                           std::size_t max_rows = 1000000) {
  task.validate();
  if (train.empty()) throw ValueError("training split is empty");
  std::size_t total = 0;
  for (const auto& tr : train) total += tr.size() * tr.points();
  const std::size_t stride = std::max<std::size_t>(1, (total + max_rows - 1) / max_rows);
  const std::size_t C = train[0].frames[0].channels();
  std::vector<double> rows;
  std::size_t counter = 0;
  for (const auto& tr : train)
    for (const auto& f : tr.frames) {
      if (f.channels() != C) throw DimensionError("training trajectories disagree on channel count");
      for (std::size_t i = 0; i < f.size(); ++i, ++counter)
        if (counter % stride == 0)
          for (std::size_t c = 0; c < C; ++c) rows.push_back(f.features(i, c));
    }
  Preprocessing p;
  p.task = task;
  const std::size_t n = rows.size() / C;
  p.norm = robust_stats(Tensor<double>({n, C}, std::move(rows)), task.log_scale);
  p.bounds = train[0].bounds();
  return p;
}

/// Fills channel counts, spatial dim, time-condition bounds and (when
/// radius <= 0) a calibrated radius from the data. Explicit values that
/// disagree with the data raise DimensionError.
inline UptConfig resolve_model_config(UptConfig c, const Dataset& data, const Preprocessing& prep) {
  const auto& f0 = data.train.at(0).frames.at(0);
  const std::size_t ch = prep.task.history * f0.channels();
  auto fill = [](std::size_t& field, std::size_t want, const char* name) {
    if (field == 0) field = want;
    if (field != want)
      throw DimensionError(std::string("model.") + name + " = " + std::to_string(field) + " but the data needs " +
                           std::to_string(want));
  };
  fill(c.dim, f0.dim(), "dim");
  fill(c.in_channels, ch, "in_channels");
  fill(c.out_channels, ch, "out_channels");
  if (c.conditions.empty() && c.cond_dim > 0) {
    const auto& cb = data.train[0].meta.at("conditions");
    for (auto it = cb.begin(); it != cb.end(); ++it)
      c.conditions.push_back({it.key(), {it.value().at(0).get<double>(), it.value().at(1).get<double>()}});
  }
  if (c.radius <= 0) c.radius = calibrate_radius(prep.positions(f0.positions), 24.0);
  return c;
}

/// One supervised example in model space.
template <class T>
struct Sample {
  Tensor<double> in_pos;  // k x dim, rescaled
  Tensor<T> in_feat;      // k x history*C, normalized
  double t_in = 0;
  Tensor<double> q_pos;   // k' x dim, rescaled (target frame)
  Tensor<T> target;       // k' x history*C
  Tensor<T> persistence;  // input-frame features at the query rows
  double t_out = 0;
  std::map<std::string, double> scalars;
};

inline Index choose_rows(std::size_t k, std::size_t n, Rng& rng) {
  Index rows;
  if (n >= k) {
    rows.resize(k);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return rows;
  }
  rows = sample_supernodes(k, n, rng);
  std::sort(rows.begin(), rows.end());
  return rows;
}

template <class T>
Tensor<T> stacked_features(const std::vector<const PointCloudFrame*>& frames, const Index& rows,
                           const Preprocessing& prep) {
  const std::size_t C = frames[0]->channels(), H = frames.size();
  Tensor<T> out({rows.size(), H * C});
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < C; ++c)
        out(i, h * C + c) = static_cast<T>(prep.norm.forward(frames[h]->features(rows[i], c), c));
  return out;
}

/// Builds a sample from explicit input frames (oldest first) and target
/// frames. in_rows / q_rows select points; all frames must share rows.
template <class T>
Sample<T> make_sample(const std::vector<const PointCloudFrame*>& in_frames,
                      const std::vector<const PointCloudFrame*>& out_frames, const Index& in_rows, const Index& q_rows,
                      const Preprocessing& prep) {
  if (in_frames.size() != prep.task.history || out_frames.size() != prep.task.history)
    throw ValueError("sample needs " + std::to_string(prep.task.history) + " input and target frames");
  const auto& ft = *in_frames.back();
  const auto& fo = *out_frames.back();
  for (const auto* f : in_frames)
    if (f->size() != ft.size() || f->channels() != prep.norm.channels())
      throw ValueError("input frames come from mismatched trajectories");
  for (const auto* f : out_frames)
    if (f->size() != fo.size() || f->channels() != prep.norm.channels())
      throw ValueError("target frames come from mismatched trajectories");
  if (fo.size() != ft.size()) throw ValueError("input and target frames have different point counts");
  if (!(fo.time > ft.time)) throw ValueError("target frame must lie after the input frame");
  Sample<T> s;
  s.in_pos = prep.positions(take_rows(ft.positions, in_rows));
  s.in_feat = stacked_features<T>(in_frames, in_rows, prep);
  s.t_in = ft.time;
  s.q_pos = prep.positions(take_rows(fo.positions, q_rows));
  s.target = stacked_features<T>(out_frames, q_rows, prep);
  s.persistence = stacked_features<T>(in_frames, q_rows, prep);
  s.t_out = fo.time;
  s.scalars = ft.conditions;
  return s;
}

inline std::vector<const PointCloudFrame*> frame_window(const Trajectory& tr, std::size_t last, std::size_t history) {
  std::vector<const PointCloudFrame*> out;
  for (std::size_t h = 0; h < history; ++h) out.push_back(&tr.frames.at(last + 1 + h - history));
  return out;
}

/// Training sample at input frame t: random input subsample, k' target queries.
template <class T>
Sample<T> build_sample(const Trajectory& tr, std::size_t t, const Preprocessing& prep, const TrainConfig& cfg,
                       Rng& rng) {
  const auto& task = prep.task;
  if (t < task.first_input_frame() || t + task.delta_frames >= tr.size())
    throw IndexError("input frame " + std::to_string(t) + " has no target in a trajectory of " +
                     std::to_string(tr.size()) + " frames");
  const std::size_t k = tr.points();
  const auto n_lo = static_cast<std::size_t>(std::llround(cfg.subsample_lo * static_cast<double>(k)));
  const auto n_hi = static_cast<std::size_t>(std::llround(cfg.subsample_hi * static_cast<double>(k)));
  const std::size_t n_in = std::max<std::size_t>(1, n_lo + static_cast<std::size_t>(rng.below(n_hi - n_lo + 1)));
  const auto in_rows = choose_rows(k, n_in, rng);
  const auto q_rows = choose_rows(k, cfg.queries, rng);
  return make_sample<T>(frame_window(tr, t, task.history), frame_window(tr, t + task.delta_frames, task.history),
                        in_rows, q_rows, prep);
}

template <class T>
struct LossVars {
  Var<T> total, next, inv_dec, inv_enc;
};

/// The objective for one sample on graph g. Graph sampling draws from rng.
/// Inverse encoding re-encodes the detached prediction at the query
/// positions (fresh supernodes among the queries) and compares with the
/// detached propagated latent.
template <class T>
LossVars<T> sample_losses(Graph<T>& g, const UptModel<T>& model, const Sample<T>& s, const TrainConfig& cfg,
                          Rng& rng) {
  const auto& mc = model.config();
  const auto in_pos = s.in_pos.template cast<T>();
  const auto q_pos = s.q_pos.template cast<T>();
  const auto sg = model.make_graph(s.in_pos, rng);
  auto cond_in = model.condition(g, s.t_in, s.scalars);
  auto cond_out = model.condition(g, s.t_out, s.scalars);
  auto z = model.encode(g, g.constant(s.in_feat), in_pos, sg, cond_in);
  auto z_next = model.approximate(g, z, cond_in);
  auto pred = model.decode(g, z_next, q_pos, cond_out);
  auto next = mse(pred, g.constant(s.target));
  if (!cfg.inverse_losses) {
    auto zero = g.constant(Tensor<T>({1}));
    return {weighted_sum<T>({next}, {static_cast<T>(cfg.weights.next)}), next, zero, zero};
  }
  const std::size_t k = s.in_pos.rows();
  const auto dec_rows = choose_rows(k, cfg.inv_dec_queries == 0 ? k : cfg.inv_dec_queries, rng);
  const bool all_rows = dec_rows.size() == k;
  auto rec = model.decode(g, z, all_rows ? in_pos : take_rows(in_pos, dec_rows), cond_in);
  auto inv_dec = mse(rec, g.constant(all_rows ? s.in_feat : take_rows(s.in_feat, dec_rows)));

  const std::size_t kq = s.q_pos.rows();
  const auto qg = model.make_graph(s.q_pos, rng, std::min(mc.n_supernodes, kq));
  auto z_re = model.encode(g, g.detach(pred), q_pos, qg, cond_out);
  auto inv_enc = mse(z_re, g.detach(z_next));
  auto total = weighted_sum<T>({next, inv_dec, inv_enc}, {static_cast<T>(cfg.weights.next),
                                                          static_cast<T>(cfg.weights.inv_dec),
                                                          static_cast<T>(cfg.weights.inv_enc)});
  return {total, next, inv_dec, inv_enc};
}

struct LossParts {
  double total = 0, next = 0, inv_dec = 0, inv_enc = 0;

  LossParts& operator+=(const LossParts& o) {
    total += o.total;
    next += o.next;
    inv_dec += o.inv_dec;
    inv_enc += o.inv_enc;
    return *this;
  }
  LossParts scaled(double f) const { return {total * f, next * f, inv_dec * f, inv_enc * f}; }
};

/// Forward + backward for one sample; gradients of weight * loss are added
/// to the parameter grads.
template <class T>
LossParts accumulate_sample(const UptModel<T>& model, const Sample<T>& s, const TrainConfig& cfg, Rng& rng,
                            double weight) {
  Graph<T> g;
  auto l = sample_losses(g, model, s, cfg, rng);
  g.backward(scale(l.total, static_cast<T>(weight)));
  g.accumulate_param_grads();
  auto v = [](const Var<T>& x) { return static_cast<double>(x.value()[0]); };
  return {v(l.total), v(l.next), v(l.inv_dec), v(l.inv_enc)};
}

/// Loss of a sample without gradients (same graph draws for a given rng).
template <class T>
LossParts sample_loss_value(const UptModel<T>& model, const Sample<T>& s, const TrainConfig& cfg, Rng& rng) {
  Graph<T> g(false);
  auto l = sample_losses(g, model, s, cfg, rng);
  auto v = [](const Var<T>& x) { return static_cast<double>(x.value()[0]); };
  return {v(l.total), v(l.next), v(l.inv_dec), v(l.inv_enc)};
}

/// One optimizer step on a fixed list of samples; sample i draws its graphs
/// from rngs[i] (copied, so callers can replay the same draws).
template <class T>
LossParts training_step(UptModel<T>& model, AdamState<T>& opt, const std::vector<Sample<T>>& batch,
                        const std::vector<Rng>& rngs, const TrainConfig& cfg, double lr) {
  if (batch.empty() || rngs.size() != batch.size()) throw ValueError("training_step: batch/rng size mismatch");
  auto& ps = model.parameters();
  ps.zero_grad();
  LossParts sum;
  const double w = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng r = rngs[i];
    sum += accumulate_sample(model, batch[i], cfg, r, w);
  }
  adamw_step(ps, opt, lr, {0.9, 0.999, 1e-8, cfg.weight_decay});
  return sum.scaled(w);
}

// ------------------------------------------------------------- Evaluation

struct EvalConfig {
  std::size_t input_points = 0;            // nominal input count, 0 = all points
  std::size_t samples_per_trajectory = 4;  // input frames evaluated per trajectory
  std::size_t queries = 0;                 // target positions, 0 = all points
  std::uint64_t seed = 1234;
};

struct OneStepResult {
  double mse = 0;          // model, normalized space
  double persistence = 0;  // frame_t features at t', normalized space
  std::size_t samples = 0;
};

/// Input frames evaluated for a trajectory (deterministic in seed and index).
inline std::vector<std::size_t> eval_starts(const Trajectory& tr, const TaskSpec& task, std::size_t count,
                                            const Rng& base) {
  const std::size_t n = task.valid_starts(tr.size());
  if (n == 0) throw ValueError("trajectory too short for the task");
  std::vector<std::size_t> out;
  if (count == 0 || count >= n) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(task.first_input_frame() + i);
    return out;
  }
  Rng r = base;
  auto pick = sample_supernodes(n, count, r);
  std::sort(pick.begin(), pick.end());
  for (auto p : pick) out.push_back(task.first_input_frame() + p);
  return out;
}

/// One-step MSE over a split. `multiplier` scales the nominal input count;
/// n_supernodes overrides the model's value. Frames, input rows, queries and
/// graphs come from independent streams so changing the multiplier or n_s
/// leaves the other draws untouched.
template <class T>
OneStepResult evaluate_one_step(const UptModel<T>& model, const std::vector<Trajectory>& split,
                                const Preprocessing& prep, const EvalConfig& ec, double multiplier = 1.0,
                                std::optional<std::size_t> n_supernodes = std::nullopt) {
  OneStepResult res;
  const Rng base(ec.seed);
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto& tr = split[i];
    const std::size_t k = tr.points();
    const std::size_t nominal = ec.input_points == 0 ? k : ec.input_points;
    const auto n_in = static_cast<std::size_t>(std::llround(multiplier * static_cast<double>(nominal)));
    if (n_in < 1 || n_in > k)
      throw ValueError("evaluation needs " + std::to_string(n_in) + " input points but the trajectory has " +
                       std::to_string(k));
    const auto starts = eval_starts(tr, prep.task, ec.samples_per_trajectory, base.derive(3 * i));
    for (std::size_t j = 0; j < starts.size(); ++j) {
      Rng row_rng = base.derive(3 * i + 1).derive(j);
      Rng query_rng = base.derive(3 * i + 2).derive(j);
      Rng graph_rng = base.derive(3 * i + 1).derive(j + 1000003);
      const auto in_rows = choose_rows(k, n_in, row_rng);
      const auto q_rows = choose_rows(k, ec.queries == 0 ? k : ec.queries, query_rng);
      const auto t = starts[j];
      auto s = make_sample<T>(frame_window(tr, t, prep.task.history),
                              frame_window(tr, t + prep.task.delta_frames, prep.task.history), in_rows, q_rows, prep);
      Graph<T> g(false);
      const auto sg = model.make_graph(s.in_pos, graph_rng, n_supernodes);
      auto cond_in = model.condition(g, s.t_in, s.scalars);
      auto z = model.approximate(g, model.encode(g, g.constant(s.in_feat), s.in_pos.template cast<T>(), sg, cond_in),
                                 cond_in);
      auto pred = model.decode(g, z, s.q_pos.template cast<T>(), model.condition(g, s.t_out, s.scalars));
      res.mse += static_cast<double>(mse(pred, g.constant(s.target)).value()[0]);
      res.persistence += static_cast<double>(mse(g.constant(s.persistence), g.constant(s.target)).value()[0]);
      ++res.samples;
    }
  }
  if (res.samples == 0) throw ValueError("evaluation split is empty");
  res.mse /= static_cast<double>(res.samples);
  res.persistence /= static_cast<double>(res.samples);
  return res;
}

// ------------------------------------------------------------- Checkpoints

inline constexpr char kCheckpointMagic[] = "UPTC";

struct TrainState {
  std::size_t epochs_done = 0;
  std::size_t step = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
};

inline void to_json(nlohmann::json& j, const TrainState& s) {
  j = {{"epochs_done", s.epochs_done},
       {"step", s.step},
       {"best_val", std::isfinite(s.best_val) ? nlohmann::json(s.best_val) : nlohmann::json(nullptr)},
       {"best_epoch", s.best_epoch}};
}
inline void from_json(const nlohmann::json& j, TrainState& s) {
  j.at("epochs_done").get_to(s.epochs_done);
  j.at("step").get_to(s.step);
  s.best_val = j.at("best_val").is_null() ? std::numeric_limits<double>::infinity() : j.at("best_val").get<double>();
  j.at("best_epoch").get_to(s.best_epoch);
}

template <class T>
struct Checkpoint {
  UptConfig model;
  Preprocessing prep;
  TrainState state;
  nlohmann::json run = nlohmann::json::object();  // resolved run configuration
  std::vector<Array> params, adam_m, adam_v;
  std::size_t adam_step = 0;
};

template <class T>
void save_checkpoint(const std::filesystem::path& path, const UptModel<T>& model, const AdamState<T>* opt,
                     const Preprocessing& prep, const TrainState& state, const nlohmann::json& run = {}) {
  Container c;
  c.magic = kCheckpointMagic;
  c.meta = {{"model", model.config()},
            {"preprocessing", prep},
            {"train_state", state},
            {"run", run.is_null() ? nlohmann::json::object() : run},
            {"adam_step", opt ? opt->step : 0},
            {"has_optimizer", opt != nullptr}};
  std::size_t i = 0;
  for (const auto& p : model.parameters()) {
    c.arrays.push_back(Array::from("param/" + p->name, p->value));
    if (opt) {
      c.arrays.push_back(Array::from("adam_m/" + p->name, opt->m.at(i)));
      c.arrays.push_back(Array::from("adam_v/" + p->name, opt->v.at(i)));
    }
    ++i;
  }
  write_container(c, path);
}

template <class T>
struct LoadedCheckpoint {
  std::unique_ptr<UptModel<T>> model;
  AdamState<T> opt;
  bool has_optimizer = false;
  Preprocessing prep;
  TrainState state;
  nlohmann::json run;
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  const auto c = read_container(path, kCheckpointMagic);
  LoadedCheckpoint<T> out;
  try {
    out.model = std::make_unique<UptModel<T>>(c.meta.at("model").get<UptConfig>());
    out.prep = c.meta.at("preprocessing").get<Preprocessing>();
    out.state = c.meta.at("train_state").get<TrainState>();
    out.run = c.meta.value("run", nlohmann::json::object());
    out.has_optimizer = c.meta.at("has_optimizer").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed checkpoint metadata: " + e.what());
  }
  auto& ps = out.model->parameters();
  out.opt.init(ps);
  out.opt.step = c.meta.value("adam_step", std::size_t{0});
  std::size_t i = 0;
  for (auto& p : ps) {
    auto load = [&](const std::string& name, Tensor<T>& dst) {
      auto t = c.array(name).template to<T>();
      if (t.shape() != p->value.shape())
        throw FormatError(path.string() + ": array '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                          shape_str(p->value.shape()));
      dst = std::move(t);
    };
    load("param/" + p->name, p->value);
    if (out.has_optimizer) {
      load("adam_m/" + p->name, out.opt.m[i]);
      load("adam_v/" + p->name, out.opt.v[i]);
    }
    ++i;
  }
  if (c.arrays.size() != ps.size() * (out.has_optimizer ? 3 : 1))
    throw FormatError(path.string() + ": checkpoint holds parameters the model does not have");
  return out;
}

// ------------------------------------------------------------------ Fit

inline constexpr char kMetricsHeader[] = "epoch,step,lr,loss_total,loss_next,loss_inv_dec,loss_inv_enc,val_mse";

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

struct FitOptions {
  std::filesystem::path out_dir;  // empty: no files written
  EvalConfig eval;
  nlohmann::json run = nlohmann::json::object();
  std::function<void(std::size_t epoch, const LossParts& mean, double val_mse)> on_epoch;
};

struct EpochLog {
  LossParts mean;
  double val_mse = std::numeric_limits<double>::quiet_NaN();
};

/// Samples of one epoch: each train trajectory contributes
/// samples_per_trajectory random input frames; the order is shuffled.
inline std::vector<std::pair<std::size_t, std::size_t>> epoch_plan(const Dataset& data, const TaskSpec& task,
                                                                   const TrainConfig& cfg, std::size_t epoch) {
  Rng rng = Rng(cfg.seed).derive(0x65706f6368ULL).derive(epoch);
  std::vector<std::pair<std::size_t, std::size_t>> plan;
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    const std::size_t n = task.valid_starts(data.train[i].size());
    if (n == 0) throw ValueError("training trajectory " + std::to_string(i) + " is too short for the task");
    for (std::size_t r = 0; r < cfg.samples_per_trajectory; ++r)
      plan.emplace_back(i, task.first_input_frame() + static_cast<std::size_t>(rng.below(n)));
  }
  rng.shuffle(plan);
  return plan;
}

inline std::size_t steps_per_epoch(const Dataset& data, const TrainConfig& cfg) {
  const std::size_t n = data.train.size() * cfg.samples_per_trajectory;
  return (n + cfg.batch_size - 1) / cfg.batch_size;
}

/// Runs epochs state.epochs_done .. cfg.epochs-1. Per-sample randomness is
/// derived from (seed, epoch, step, slot), so a resumed run replays exactly
/// what an uninterrupted one would have done.
template <class T>
std::vector<EpochLog> fit(UptModel<T>& model, AdamState<T>& opt, TrainState& state, const Dataset& data,
                          const Preprocessing& prep, const TrainConfig& cfg, const FitOptions& fo = {}) {
  cfg.validate();
  if (data.train.empty()) throw ValueError("training split is empty");
  const auto& mc = model.config();
  for (const auto* split : {&data.train, &data.val})
    for (const auto& tr : *split) {
      if (tr.frames.at(0).channels() * prep.task.history != mc.in_channels || tr.frames[0].dim() != mc.dim)
        throw DimensionError("dataset has " + std::to_string(tr.frames[0].channels()) + " channels in " +
                             std::to_string(tr.frames[0].dim()) + "D but the model expects " +
                             std::to_string(mc.in_channels) + " inputs in " + std::to_string(mc.dim) + "D");
    }
  if (opt.m.size() != model.parameters().size()) opt.init(model.parameters());
  const std::size_t spe = steps_per_epoch(data, cfg);
  const std::size_t total = spe * cfg.epochs, warmup = spe * cfg.warmup_epochs;

  std::ofstream csv;
  const bool files = !fo.out_dir.empty();
  if (files) {
    std::filesystem::create_directories(fo.out_dir / "checkpoints");
    // Keep only rows of epochs the checkpoint has completed, then append.
    const auto path = fo.out_dir / "metrics.csv";
    std::vector<std::string> kept;
    if (state.epochs_done > 0 && std::filesystem::exists(path)) {
      std::ifstream in(path);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line))
        if (!line.empty() && std::stoull(line.substr(0, line.find(','))) < state.epochs_done) kept.push_back(line);
    }
    csv.open(path, std::ios::trunc);
    csv << kMetricsHeader << "\n";
    for (const auto& line : kept) csv << line << "\n";
  }

  std::vector<EpochLog> logs;
  const Rng root = Rng(cfg.seed).derive(0x73616d706c65ULL);
  for (std::size_t epoch = state.epochs_done; epoch < cfg.epochs; ++epoch) {
    const auto plan = epoch_plan(data, prep.task, cfg, epoch);
    EpochLog log;
    std::vector<std::string> rows;
    for (std::size_t b = 0; b < spe; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(plan.size(), lo + cfg.batch_size);
      std::vector<Sample<T>> batch;
      std::vector<Rng> rngs;
      for (std::size_t s = lo; s < hi; ++s) {
        Rng r = root.derive(epoch).derive(state.step).derive(s - lo);
        batch.push_back(build_sample<T>(data.train[plan[s].first], plan[s].second, prep, cfg, r));
        rngs.push_back(r);
      }
      const double lr = lr_schedule(state.step, total, warmup, cfg.lr);
      const auto parts = training_step(model, opt, batch, rngs, cfg, lr);
      log.mean += parts.scaled(1.0 / static_cast<double>(spe));
      rows.push_back(std::to_string(epoch) + "," + std::to_string(state.step) + "," + format_double(lr) + "," +
                     format_double(parts.total) + "," + format_double(parts.next) + "," +
                     format_double(parts.inv_dec) + "," + format_double(parts.inv_enc) + ",");
      ++state.step;
    }
    if (!data.val.empty()) log.val_mse = evaluate_one_step(model, data.val, prep, fo.eval).mse;
    if (std::isfinite(log.val_mse)) rows.back() += format_double(log.val_mse);
    state.epochs_done = epoch + 1;
    const bool best = std::isfinite(log.val_mse) && log.val_mse < state.best_val;
    if (best) {
      state.best_val = log.val_mse;
      state.best_epoch = epoch;
    }
    if (files) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04zu.uptc", epoch);
      const auto dir = fo.out_dir / "checkpoints";
      save_checkpoint(dir / name, model, &opt, prep, state, fo.run);
      save_checkpoint(dir / "last.uptc", model, &opt, prep, state, fo.run);
      if (best || !std::filesystem::exists(dir / "best.uptc")) {
        save_checkpoint(dir / "best.uptc", model, &opt, prep, state, fo.run);
        std::ofstream(dir / "best.txt", std::ios::trunc) << name << "\n";
      }
      for (const auto& r : rows) csv << r << "\n";
      csv.flush();
    }
    if (fo.on_epoch) fo.on_epoch(epoch, log.mean, log.val_mse);
    logs.push_back(log);
  }
  return logs;
}

}  // namespace upt
