#pragma once

// Latent and autoregressive rollouts, rollout metrics and the
// discretization sweep.

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "upt/plot.hpp"
#include "upt/train.hpp"

namespace upt {

class UnsupportedModeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class RolloutMode { kLatent, kAutoregressive };

inline std::string to_string(RolloutMode m) { return m == RolloutMode::kLatent ? "latent" : "autoregressive"; }

inline RolloutMode parse_mode(const std::string& s) {
  if (s == "latent") return RolloutMode::kLatent;
  if (s == "autoregressive") return RolloutMode::kAutoregressive;
  throw ValueError("unknown rollout mode '" + s + "' (expected latent or autoregressive)");
}

template <class T>
struct RolloutResult {
  RolloutMode mode = RolloutMode::kLatent;
  std::vector<Tensor<T>> predictions;  // per step, model space
  std::vector<double> times;           // physical time of each prediction
  std::vector<double> mse;             // per step, filled by callers that know the truth
  double wall_seconds = 0;
  std::size_t encodes = 0;
};

/// Model-space initial state.
template <class T>
struct RolloutInput {
  Tensor<double> positions;  // k x dim, rescaled
  Tensor<T> features;        // k x in_channels, normalized
  double time = 0;
  std::map<std::string, double> scalars;
};

using QueryFn = std::function<Tensor<double>(std::size_t step)>;

/// Encode once, then apply the approximator T times, decoding each latent at
/// query(step) (step = 1..T). T = 0 decodes the encoded state at query(0).
/// With final_only, only step T is decoded.
template <class T>
RolloutResult<T> latent_rollout(const UptModel<T>& model, const RolloutInput<T>& in, const QueryFn& query,
                                std::size_t steps, double dt, Rng& rng, bool final_only = false) {
  RolloutResult<T> res;
  res.mode = RolloutMode::kLatent;
  const auto before = model.encode_count();
  const auto t0 = std::chrono::steady_clock::now();
  Graph<T> g(false);
  const auto sg = model.make_graph(in.positions, rng);
  auto cond = model.condition(g, in.time, in.scalars);
  auto z = model.encode(g, g.constant(in.features), in.positions.template cast<T>(), sg, cond);
  if (steps == 0) {
    res.predictions.push_back(model.decode(g, z, query(0).template cast<T>(), cond).value());
    res.times.push_back(in.time);
  }
  Tensor<T> zt = z.value();
  double t = in.time;
  for (std::size_t s = 1; s <= steps; ++s) {
    // A fresh tape per step keeps memory flat over long rollouts.
    Graph<T> gs(false);
    auto c_in = model.condition(gs, t, in.scalars);
    auto zn = model.approximate(gs, gs.constant(zt), c_in);
    t = in.time + static_cast<double>(s) * dt;
    zt = zn.value();
    if (final_only && s < steps) continue;
    auto out = model.decode(gs, zn, query(s).template cast<T>(), model.condition(gs, t, in.scalars));
    res.predictions.push_back(out.value());
    res.times.push_back(t);
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.encodes = model.encode_count() - before;
  return res;
}

/// Decode at the input positions every step and feed the prediction back
/// through the encoder with a freshly drawn graph. Lagrangian tasks cannot
/// do this: the model never predicts where particles move.
template <class T>
RolloutResult<T> autoregressive_rollout(const UptModel<T>& model, const TaskSpec& task, const RolloutInput<T>& in,
                                        std::size_t steps, double dt, Rng& rng) {
  if (task.lagrangian)
    throw UnsupportedModeError(
        "autoregressive rollout is unsupported for Lagrangian data: particle positions are unknown after the first "
        "step");
  if (model.config().in_channels != model.config().out_channels)
    throw UnsupportedModeError("autoregressive rollout needs matching input and output channels");
  RolloutResult<T> res;
  res.mode = RolloutMode::kAutoregressive;
  const auto before = model.encode_count();
  const auto t0 = std::chrono::steady_clock::now();
  const auto pos = in.positions.template cast<T>();
  Tensor<T> feat = in.features;
  double t = in.time;
  for (std::size_t s = 1; s <= steps; ++s) {
    Graph<T> g(false);
    const auto sg = model.make_graph(in.positions, rng);
    auto cond = model.condition(g, t, in.scalars);
    auto z = model.approximate(g, model.encode(g, g.constant(feat), pos, sg, cond), cond);
    t = in.time + static_cast<double>(s) * dt;
    feat = model.decode(g, z, pos, model.condition(g, t, in.scalars)).value();
    res.predictions.push_back(feat);
    res.times.push_back(t);
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.encodes = model.encode_count() - before;
  return res;
}

// ---------------------------------------------------------------- Metrics

/// Pearson correlation over all entries, or over one column when channel is
/// set. Zero variance on either side scores 0.
template <class A, class B>
double pearson(const Tensor<A>& pred, const Tensor<B>& truth, std::optional<std::size_t> channel = std::nullopt) {
  if (pred.shape() != truth.shape()) throw DimensionError("pearson: shape mismatch");
  double sp = 0, st = 0, n = 0;
  auto each = [&](auto&& fn) {
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (!channel || i % pred.cols() == *channel) fn(static_cast<double>(pred[i]), static_cast<double>(truth[i]));
  };
  each([&](double p, double t) {
    sp += p;
    st += t;
    n += 1;
  });
  const double mp = sp / n, mt = st / n;
  double cov = 0, vp = 0, vt = 0;
  each([&](double p, double t) {
    cov += (p - mp) * (t - mt);
    vp += (p - mp) * (p - mp);
    vt += (t - mt) * (t - mt);
  });
  if (!(vp > 0) || !(vt > 0)) return 0.0;
  return cov / std::sqrt(vp * vt);
}

/// First step index whose correlation drops below threshold, or T.
template <class A, class B>
std::size_t correlation_time(const std::vector<Tensor<A>>& pred, const std::vector<Tensor<B>>& truth,
                             double threshold = 0.8, std::optional<std::size_t> channel = std::nullopt) {
  if (pred.size() != truth.size()) throw DimensionError("correlation_time: step count mismatch");
  for (std::size_t s = 0; s < pred.size(); ++s)
    if (pearson(pred[s], truth[s], channel) < threshold) return s;
  return pred.size();
}

/// Mean over rows of the Euclidean norm of (pred - truth) restricted to
/// columns [col, col + width).
template <class A, class B>
double velocity_error(const Tensor<A>& pred, const Tensor<B>& truth, std::size_t col = 0,
                      std::optional<std::size_t> width = std::nullopt) {
  if (pred.shape() != truth.shape()) throw DimensionError("velocity_error: shape mismatch");
  const std::size_t w = width.value_or(pred.cols() - col);
  if (col + w > pred.cols()) throw DimensionError("velocity_error: column range out of bounds");
  double total = 0;
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    double s = 0;
    for (std::size_t c = col; c < col + w; ++c) {
      const double d = static_cast<double>(pred(r, c)) - static_cast<double>(truth(r, c));
      s += d * d;
    }
    total += std::sqrt(s);
  }
  return total / static_cast<double>(pred.rows());
}

template <class A, class B>
double mse_of(const Tensor<A>& a, const Tensor<B>& b) {
  if (a.shape() != b.shape()) throw DimensionError("mse: shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// Centred moving average (window clipped at the ends).
inline std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
  std::vector<double> out(v.size());
  const long h = static_cast<long>(window / 2), n = static_cast<long>(v.size());
  for (long i = 0; i < n; ++i) {
    double s = 0;
    long c = 0;
    for (long j = std::max(0L, i - h); j <= std::min(n - 1, i + h); ++j, ++c) s += v[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = s / static_cast<double>(c);
  }
  return out;
}

inline bool non_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] < v[i - 1]) return false;
  return true;
}

// ------------------------------------------------- Trajectory-level rollouts

/// A rollout on a dataset trajectory with its ground truth, all in model space.
template <class T>
struct TrajectoryRollout {
  RolloutResult<T> result;
  std::vector<Tensor<T>> truth;           // per step, same rows as predictions
  std::vector<std::size_t> target_frames; // last frame index of each target window
  Index rows;                             // evaluated point rows
};

struct RolloutSettings {
  std::size_t steps = 20;
  std::size_t input_points = 0;  // 0 = all
  std::size_t queries = 0;       // latent decode rows, 0 = all
  std::uint64_t seed = 7;
};

/// Starts at the first valid input frame. Latent mode decodes at the chosen
/// query rows (positions of the target frame); autoregressive mode decodes
/// at the input rows.
template <class T>
TrajectoryRollout<T> rollout_trajectory(const UptModel<T>& model, const Preprocessing& prep, const Trajectory& tr,
                                        RolloutMode mode, const RolloutSettings& rs) {
  const auto& task = prep.task;
  const std::size_t t0 = task.first_input_frame();
  if (t0 + rs.steps * task.delta_frames >= tr.size() && rs.steps > 0)
    throw ValueError("trajectory has " + std::to_string(tr.size()) + " frames; " + std::to_string(rs.steps) +
                     " rollout steps need " + std::to_string(t0 + rs.steps * task.delta_frames + 1));
  Rng base(rs.seed);
  Rng row_rng = base.derive(1), query_rng = base.derive(2), graph_rng = base.derive(3);
  const std::size_t k = tr.points();
  const auto in_rows = choose_rows(k, rs.input_points == 0 ? k : rs.input_points, row_rng);
  TrajectoryRollout<T> out;
  out.rows = mode == RolloutMode::kLatent ? choose_rows(k, rs.queries == 0 ? k : rs.queries, query_rng) : in_rows;
  const auto in_frames = frame_window(tr, t0, task.history);
  RolloutInput<T> in;
  in.positions = prep.positions(take_rows(in_frames.back()->positions, in_rows));
  in.features = stacked_features<T>(in_frames, in_rows, prep);
  in.time = in_frames.back()->time;
  in.scalars = in_frames.back()->conditions;
  const double dt = static_cast<double>(task.delta_frames) * tr.dt;
  if (mode == RolloutMode::kLatent) {
    QueryFn q = [&](std::size_t s) {
      return prep.positions(take_rows(tr.frames[t0 + s * task.delta_frames].positions, out.rows));
    };
    out.result = latent_rollout(model, in, q, rs.steps, dt, graph_rng);
  } else {
    out.result = autoregressive_rollout(model, task, in, rs.steps, dt, graph_rng);
  }
  const std::size_t first = rs.steps == 0 ? 0 : 1;
  for (std::size_t s = first; s <= rs.steps; ++s) {
    const std::size_t last = t0 + s * task.delta_frames;
    out.truth.push_back(stacked_features<T>(frame_window(tr, last, task.history), out.rows, prep));
    out.target_frames.push_back(last);
  }
  for (std::size_t s = 0; s < out.truth.size(); ++s)
    out.result.mse.push_back(mse_of(out.result.predictions[s], out.truth[s]));
  return out;
}

/// Per-frame velocity errors of a Lagrangian latent rollout in physical
/// units. Each step's target window covers `history` frames; frame f of the
/// window occupies feature columns [f*C, (f+1)*C).
struct FrameErrors {
  std::vector<std::size_t> frames;
  std::vector<double> model, constant_velocity;
  std::vector<double> per_step;  // mean model error over each step's window
};

template <class T>
FrameErrors lagrangian_frame_errors(const TrajectoryRollout<T>& r, const Preprocessing& prep, const Trajectory& tr) {
  const std::size_t H = prep.task.history, C = prep.norm.channels();
  const std::size_t last_known = prep.task.first_input_frame();
  const auto v_known = take_rows(tr.frames[last_known].features, r.rows);
  FrameErrors fe;
  for (std::size_t s = 0; s < r.truth.size(); ++s) {
    // Physical units: undo normalization on the whole stacked window.
    Tensor<double> pred({r.rows.size(), H * C}), truth({r.rows.size(), H * C});
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = prep.norm.inverse(static_cast<double>(r.result.predictions[s][i]), (i % (H * C)) % C);
      truth[i] = prep.norm.inverse(static_cast<double>(r.truth[s][i]), (i % (H * C)) % C);
    }
    double step_sum = 0;
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t frame = r.target_frames[s] + 1 + h - H;
      const double e = velocity_error(pred, truth, h * C, C);
      Tensor<double> truth_h({r.rows.size(), C});
      for (std::size_t i = 0; i < r.rows.size(); ++i)
        for (std::size_t c = 0; c < C; ++c) truth_h(i, c) = truth(i, h * C + c);
      fe.frames.push_back(frame);
      fe.model.push_back(e);
      fe.constant_velocity.push_back(velocity_error(v_known, truth_h));
      step_sum += e;
    }
    fe.per_step.push_back(step_sum / static_cast<double>(H));
  }
  return fe;
}

/// n points per dimension at cell centres of the domain (physical units),
/// first dimension varying slowest.
inline Tensor<double> grid_points(const std::vector<Bounds>& bounds, std::size_t n) {
  if (n < 1) throw ValueError("grid needs at least one point per dimension");
  const std::size_t dim = bounds.size();
  std::size_t total = 1;
  for (std::size_t d = 0; d < dim; ++d) total *= n;
  Tensor<double> out({total, dim});
  for (std::size_t i = 0; i < total; ++i) {
    std::size_t rem = i;
    for (std::size_t d = dim; d-- > 0;) {
      const std::size_t idx = rem % n;
      rem /= n;
      out(i, d) = bounds[d].lo + (static_cast<double>(idx) + 0.5) / static_cast<double>(n) * (bounds[d].hi - bounds[d].lo);
    }
  }
  return out;
}

// ------------------------------------------------------------------ Sweep

struct SweepRow {
  double multiplier = 1;
  std::size_t n_supernodes = 0;
  std::size_t input_points = 0;
  double mse = 0;
};

/// One-step test MSE for every (multiplier, n_s) pair without retraining.
template <class T>
std::vector<SweepRow> discretization_sweep(const UptModel<T>& model, const std::vector<Trajectory>& test,
                                           const Preprocessing& prep, const EvalConfig& ec,
                                           const std::vector<double>& multipliers,
                                           const std::vector<std::size_t>& supernodes) {
  if (test.empty()) throw ValueError("sweep needs a non-empty test split");
  std::vector<SweepRow> rows;
  for (double m : multipliers)
    for (std::size_t ns : supernodes) {
      const std::size_t nominal = ec.input_points == 0 ? test[0].points() : ec.input_points;
      const auto n_in = static_cast<std::size_t>(std::llround(m * static_cast<double>(nominal)));
      if (ns > n_in)
        throw ValueError("sweep: " + std::to_string(ns) + " supernodes exceed the " + std::to_string(n_in) +
                         " available input points");
      const auto r = evaluate_one_step(model, test, prep, ec, m, ns);
      rows.push_back({m, ns, n_in, r.mse});
    }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream o;
  o << "multiplier,n_supernodes,input_points,test_mse\n";
  for (const auto& r : rows)
    o << format_double(r.multiplier) << "," << r.n_supernodes << "," << r.input_points << "," << format_double(r.mse)
      << "\n";
  return o.str();
}

inline std::string sweep_svg(const std::vector<SweepRow>& rows) {
  std::vector<Series> series;
  for (const auto& r : rows) {
    const std::string name = "n_s = " + std::to_string(r.n_supernodes);
    auto it = std::find_if(series.begin(), series.end(), [&](const Series& s) { return s.name == name; });
    if (it == series.end()) {
      series.push_back({name, {}, {}});
      it = series.end() - 1;
    }
    it->x.push_back(static_cast<double>(r.input_points));
    it->y.push_back(r.mse);
  }
  return svg_line_chart("Discretization sweep", "input points", "one-step test MSE", series);
}

}  // namespace upt
