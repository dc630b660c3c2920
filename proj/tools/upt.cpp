// upt: data generation, training, evaluation, rollouts, sweeps, gradient
// checks and plotting from the command line.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "upt/config.hpp"
#include "upt/dataset.hpp"
#include "upt/gradsuite.hpp"
#include "upt/plot.hpp"
#include "upt/rollout.hpp"
#include "upt/train.hpp"

namespace fs = std::filesystem;
using namespace upt;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::size_t max_rollout_steps(const Trajectory& tr, const TaskSpec& task) {
  const std::size_t t0 = task.first_input_frame();
  return tr.size() > t0 ? (tr.size() - 1 - t0) / task.delta_frames : 0;
}

const std::vector<Trajectory>& pick_split(const Dataset& d, const std::string& s) {
  if (s == "train") return d.train;
  if (s == "val") return d.val;
  if (s == "test") return d.test;
  throw UsageError("--split must be train, val or test");
}

RunConfig run_config_of(const LoadedCheckpoint<float>& ck) {
  if (ck.run.is_object() && !ck.run.empty()) return parse_run_config(ck.run);
  auto c = default_run_config(ck.prep.task.lagrangian ? "tgv2d" : "diffusion2d");
  c.data.spec = ck.prep.task;
  return c;
}

std::optional<std::size_t> channel_of(long c) {
  return c < 0 ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(c));
}

void render_training_plots(const fs::path& run_dir) {
  const auto t = read_csv(run_dir / "metrics.csv");
  const auto steps = t.values("step");
  std::vector<Series> losses;
  for (const char* name : {"loss_total", "loss_next", "loss_inv_dec", "loss_inv_enc"})
    losses.push_back({name, steps, t.values(name)});
  write_text(run_dir / "plots" / "loss.svg", svg_line_chart("Training loss", "step", "loss", losses, true));
  Series val{"val_mse", {}, {}};
  const auto epochs = t.values("epoch"), vals = t.values("val_mse");
  for (std::size_t i = 0; i < vals.size(); ++i)
    if (std::isfinite(vals[i])) {
      val.x.push_back(epochs[i]);
      val.y.push_back(vals[i]);
    }
  write_text(run_dir / "plots" / "val_mse.svg",
             svg_line_chart("Validation one-step MSE", "epoch", "MSE", {val}, true));
}

// ------------------------------------------------------------------ gen-data

struct GenArgs {
  std::string task, out, config, precision = "f32";
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<long long> k, steps, trajectories, n_blobs, substeps;
  std::optional<double> dt, nu, kappa;
};

int cmd_gen_data(const GenArgs& a) {
  nlohmann::json user = a.config.empty() ? nlohmann::json::object() : read_json_file(a.config);
  apply_override(user, "data.task=\"" + a.task + "\"");
  auto set_count = [&](const char* key, const std::optional<long long>& v) {
    if (!v) return;
    if (*v < 1) throw UsageError(std::string("--") + key + " must be >= 1");
    user["data"][key] = static_cast<std::size_t>(*v);
  };
  set_count("k", a.k);
  set_count("steps", a.steps);
  set_count("trajectories", a.trajectories);
  set_count("n_blobs", a.n_blobs);
  set_count("substeps", a.substeps);
  if (a.seed) user["data"]["seed"] = *a.seed;
  if (a.dt) user["data"]["dt"] = *a.dt;
  if (a.nu) user["data"]["nu"] = *a.nu;
  if (a.kappa) user["data"]["kappa"] = *a.kappa;
  for (const auto& s : a.sets) apply_override(user, s);
  const auto cfg = parse_run_config(user);
  if (a.precision != "f32" && a.precision != "f64") throw UsageError("--precision must be f32 or f64");
  const auto t0 = std::chrono::steady_clock::now();
  const auto manifest =
      generate_dataset(cfg.data, a.out, a.precision == "f32" ? Array::DType::kF32 : Array::DType::kF64);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& counts = manifest.at("counts");
  std::printf("wrote %zu trajectories (%zu/%zu/%zu) of %zu frames x %zu points to %s in %.1f s\n",
              counts.at("trajectories").get<std::size_t>(), counts.at("train").get<std::size_t>(),
              counts.at("val").get<std::size_t>(), counts.at("test").get<std::size_t>(),
              counts.at("frames").get<std::size_t>(), counts.at("points").get<std::size_t>(), a.out.c_str(), secs);
  std::printf("residual check: %s\n", manifest.at("residual_check").dump().c_str());
  return 0;
}

// --------------------------------------------------------------------- train

struct TrainArgs {
  std::string config, data, out, resume;
  std::vector<std::string> sets;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const auto t_start = std::chrono::steady_clock::now();
  std::unique_ptr<LoadedCheckpoint<float>> ck;
  nlohmann::json user;
  if (!a.resume.empty()) {
    ck = std::make_unique<LoadedCheckpoint<float>>(load_checkpoint<float>(a.resume));
    if (!ck->has_optimizer) throw UsageError(a.resume + " holds no optimizer state and cannot be resumed");
    user = ck->run.is_object() ? ck->run : nlohmann::json::object();
  } else {
    user = a.config.empty() ? nlohmann::json::object() : read_json_file(a.config);
  }
  // The dataset decides the task unless the config names one.
  const fs::path mpath = fs::path(a.data) / "manifest.json";
  if (!fs::exists(mpath)) throw std::runtime_error("no dataset manifest at " + mpath.string());
  const auto manifest = read_json_file(mpath);
  const auto data_task = manifest.value("task", std::string{});
  if (!user.contains("data") || !user["data"].contains("task")) user["data"]["task"] = data_task;
  for (const auto& s : a.sets) apply_override(user, s);
  auto cfg = parse_run_config(user);
  if (cfg.data.task != data_task)
    throw ConfigError("data.task is '" + cfg.data.task + "' but " + a.data + " holds " + data_task + " data");

  const auto ds = load_dataset(a.data, {"train", "val"});
  std::unique_ptr<UptModel<float>> model;
  AdamState<float> opt;
  TrainState state;
  Preprocessing prep;
  if (ck) {
    model = std::move(ck->model);
    opt = std::move(ck->opt);
    state = ck->state;
    prep = ck->prep;
    cfg.model = model->config();
  } else {
    prep = compute_preprocessing(ds.data.train, cfg.data.spec);
    cfg.model = resolve_model_config(cfg.model, ds.data, prep);
    model = std::make_unique<UptModel<float>>(cfg.model);
  }
  const fs::path out(a.out);
  fs::create_directories(out / "plots");
  const nlohmann::json resolved = cfg;
  write_json(out / "config.json", resolved);

  FitOptions fo;
  fo.out_dir = out;
  fo.eval = cfg.eval.one_step;
  fo.run = resolved;
  if (!a.quiet)
    fo.on_epoch = [&](std::size_t epoch, const LossParts& m, double val) {
      const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      std::printf("epoch %zu/%zu  loss %.5g (next %.4g, inv_dec %.4g, inv_enc %.4g)  val_mse %.5g  [%.1f s]\n",
                  epoch + 1, cfg.train.epochs, m.total, m.next, m.inv_dec, m.inv_enc, val, el);
      std::fflush(stdout);
    };
  if (!a.quiet)
    std::printf("training %zu parameters on %zu trajectories, %zu steps per epoch\n",
                model->parameters().numel(), ds.data.train.size(), steps_per_epoch(ds.data, cfg.train));
  fit(*model, opt, state, ds.data, prep, cfg.train, fo);
  render_training_plots(out);
  if (!a.quiet) std::printf("best val_mse %.6g at epoch %zu\n", state.best_val, state.best_epoch + 1);
  return 0;
}

// ---------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint, data, split = "test", out;
};

int cmd_eval(const EvalArgs& a) {
  auto ck = load_checkpoint<float>(a.checkpoint);
  const auto cfg = run_config_of(ck);
  const auto ds = load_dataset(a.data, {a.split});
  const auto& split = pick_split(ds.data, a.split);
  const auto one = evaluate_one_step(*ck.model, split, ck.prep, cfg.eval.one_step);
  nlohmann::json rep = {{"split", a.split},
                        {"trajectories", split.size()},
                        {"one_step_mse", one.mse},
                        {"persistence_mse", one.persistence},
                        {"samples", one.samples}};
  double corr = 0;
  std::vector<double> vel;
  for (const auto& tr : split) {
    auto rs = cfg.eval.rollout;
    rs.steps = std::min(rs.steps, max_rollout_steps(tr, ck.prep.task));
    const auto r = rollout_trajectory(*ck.model, ck.prep, tr, RolloutMode::kLatent, rs);
    corr += static_cast<double>(
        correlation_time(r.result.predictions, r.truth, cfg.eval.corr_threshold, channel_of(cfg.eval.corr_channel)));
    if (ck.prep.task.lagrangian) {
      const auto fe = lagrangian_frame_errors(r, ck.prep, tr);
      if (vel.empty()) vel.assign(fe.per_step.size(), 0.0);
      for (std::size_t s = 0; s < fe.per_step.size() && s < vel.size(); ++s)
        vel[s] += fe.per_step[s] / static_cast<double>(split.size());
    }
  }
  rep["correlation_time_steps"] = corr / static_cast<double>(split.size());
  rep["correlation_threshold"] = cfg.eval.corr_threshold;
  if (!vel.empty()) rep["velocity_error_per_step"] = vel;
  std::printf("%s\n", rep.dump(2).c_str());
  if (!a.out.empty()) write_json(a.out, rep);
  return 0;
}

// ------------------------------------------------------------------- rollout

struct RolloutArgs {
  std::string checkpoint, data, split = "test", out;
  std::vector<std::string> modes;
  std::optional<std::size_t> steps, grid;
  std::size_t traj = 0;
  std::optional<std::uint64_t> seed;
};

int cmd_rollout(const RolloutArgs& a) {
  auto ck = load_checkpoint<float>(a.checkpoint);
  const auto cfg = run_config_of(ck);
  const auto ds = load_dataset(a.data, {a.split});
  const auto& split = pick_split(ds.data, a.split);
  if (a.traj >= split.size())
    throw UsageError("--traj " + std::to_string(a.traj) + " out of range (" + std::to_string(split.size()) +
                     " trajectories)");
  const auto& tr = split[a.traj];
  auto rs = cfg.eval.rollout;
  if (a.steps) rs.steps = *a.steps;
  if (a.seed) rs.seed = *a.seed;
  if (rs.steps > max_rollout_steps(tr, ck.prep.task))
    throw UsageError("--steps " + std::to_string(rs.steps) + " exceeds the " +
                     std::to_string(max_rollout_steps(tr, ck.prep.task)) + " steps the trajectory supports");
  std::vector<RolloutMode> modes;
  for (const auto& m : a.modes.empty() ? std::vector<std::string>{"latent"} : a.modes) modes.push_back(parse_mode(m));
  const fs::path out(a.out);
  fs::create_directories(out);
  const auto channel = channel_of(cfg.eval.corr_channel);

  std::vector<Series> mse_series;
  std::vector<std::vector<double>> mse_by_mode;
  nlohmann::json summary = {{"trajectory", a.traj}, {"split", a.split}, {"steps", rs.steps}};
  for (auto mode : modes) {
    const auto r = rollout_trajectory(*ck.model, ck.prep, tr, mode, rs);
    std::ostringstream csv;
    const bool lag = ck.prep.task.lagrangian;
    FrameErrors fe;
    if (lag) fe = lagrangian_frame_errors(r, ck.prep, tr);
    csv << "step,time,mse,correlation" << (lag ? ",velocity_error" : "") << "\n";
    Series s{to_string(mode), {}, {}};
    for (std::size_t i = 0; i < r.result.predictions.size(); ++i) {
      const std::size_t step = rs.steps == 0 ? 0 : i + 1;
      csv << step << "," << format_double(r.result.times[i]) << "," << format_double(r.result.mse[i]) << ","
          << format_double(pearson(r.result.predictions[i], r.truth[i], channel));
      if (lag) csv << "," << format_double(fe.per_step[i]);
      csv << "\n";
      s.x.push_back(static_cast<double>(step));
      s.y.push_back(r.result.mse[i]);
    }
    write_text(out / ("rollout_" + to_string(mode) + ".csv"), csv.str());
    if (lag) {
      std::ostringstream fcsv;
      fcsv << "frame,velocity_error,constant_velocity_error\n";
      for (std::size_t i = 0; i < fe.frames.size(); ++i)
        fcsv << fe.frames[i] << "," << format_double(fe.model[i]) << "," << format_double(fe.constant_velocity[i])
             << "\n";
      write_text(out / "frame_errors.csv", fcsv.str());
      std::vector<double> fx(fe.frames.begin(), fe.frames.end());
      write_text(out / "frame_errors.svg",
                 svg_line_chart("Velocity error per frame", "frame", "mean |v - v_true|",
                                {{"UPT latent rollout", fx, fe.model}, {"constant velocity", fx, fe.constant_velocity}}));
    }
    mse_series.push_back(s);
    mse_by_mode.push_back(r.result.mse);
    summary[to_string(mode)] = {
        {"wall_seconds", r.result.wall_seconds},
        {"encodes", r.result.encodes},
        {"correlation_time_steps", correlation_time(r.result.predictions, r.truth, cfg.eval.corr_threshold, channel)}};
    std::printf("%s rollout: %zu steps in %.3f s, %zu encoder calls\n", to_string(mode).c_str(), rs.steps,
                r.result.wall_seconds, r.result.encodes);
  }
  write_text(out / "rollout.svg", svg_line_chart("Rollout MSE per step", "step", "MSE", mse_series, true));
  if (modes.size() == 2 && modes[0] != modes[1]) {
    const auto& lat = mse_by_mode[modes[0] == RolloutMode::kLatent ? 0 : 1];
    const auto& ar = mse_by_mode[modes[0] == RolloutMode::kLatent ? 1 : 0];
    double worst = 0;
    for (std::size_t i = 0; i < lat.size(); ++i) worst = std::max(worst, lat[i] / ar[i]);
    summary["max_latent_over_autoregressive_mse"] = worst;
    summary["within_2x"] = worst <= 2.0;
    std::printf("max per-step MSE ratio latent/autoregressive: %.4g (%s 2x)\n", worst, worst <= 2.0 ? "within" : "beyond");
  }
  if (a.grid) {
    // Field on a regular grid from the latent trajectory.
    const auto gp = grid_points(ck.prep.bounds, *a.grid);
    const auto q = ck.prep.positions(gp);
    RolloutInput<float> in;
    const auto& task = ck.prep.task;
    const auto frames = frame_window(tr, task.first_input_frame(), task.history);
    Index all(tr.points());
    std::iota(all.begin(), all.end(), std::size_t{0});
    Rng rows_rng = Rng(rs.seed).derive(1);
    const auto in_rows = choose_rows(tr.points(), rs.input_points == 0 ? tr.points() : rs.input_points, rows_rng);
    in.positions = ck.prep.positions(take_rows(frames.back()->positions, in_rows));
    in.features = stacked_features<float>(frames, in_rows, ck.prep);
    in.time = frames.back()->time;
    in.scalars = frames.back()->conditions;
    Rng graph_rng = Rng(rs.seed).derive(3);
    const auto r = latent_rollout(
        *ck.model, in, [&](std::size_t) { return q; }, rs.steps, static_cast<double>(task.delta_frames) * tr.dt,
        graph_rng);
    const std::size_t C = ck.prep.norm.channels();
    for (std::size_t s = 0; s < r.predictions.size(); ++s) {
      std::ostringstream g;
      for (std::size_t d = 0; d < gp.cols(); ++d) g << (d ? "," : "") << "x" << d;
      for (std::size_t c = 0; c < r.predictions[s].cols(); ++c) g << ",c" << c;
      g << "\n";
      for (std::size_t i = 0; i < gp.rows(); ++i) {
        for (std::size_t d = 0; d < gp.cols(); ++d) g << (d ? "," : "") << format_double(gp(i, d));
        for (std::size_t c = 0; c < r.predictions[s].cols(); ++c)
          g << "," << format_double(ck.prep.norm.inverse(static_cast<double>(r.predictions[s](i, c)), c % C));
        g << "\n";
      }
      char name[40];
      std::snprintf(name, sizeof name, "grid/step_%04zu.csv", rs.steps == 0 ? 0 : s + 1);
      write_text(out / name, g.str());
    }
    summary["grid"] = {{"points_per_dim", *a.grid}, {"files", r.predictions.size()}};
  }
  write_json(out / "summary.json", summary);
  return 0;
}

// --------------------------------------------------------------------- sweep

struct SweepArgs {
  std::string checkpoint, data, out;
  std::vector<double> multipliers, supernode_factors;
};

int cmd_sweep(const SweepArgs& a) {
  auto ck = load_checkpoint<float>(a.checkpoint);
  const auto cfg = run_config_of(ck);
  const auto ds = load_dataset(a.data, {"test"});
  const auto mult = a.multipliers.empty() ? cfg.eval.sweep_multipliers : a.multipliers;
  const auto fac = a.supernode_factors.empty() ? cfg.eval.sweep_supernode_factors : a.supernode_factors;
  std::vector<std::size_t> ns;
  for (double f : fac) {
    if (!(f > 0)) throw UsageError("supernode factors must be positive");
    ns.push_back(std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(f * static_cast<double>(ck.model->config().n_supernodes)))));
  }
  const auto rows = discretization_sweep(*ck.model, ds.data.test, ck.prep, cfg.eval.one_step, mult, ns);
  const fs::path out(a.out);
  write_text(out / "sweep.csv", sweep_csv(rows));
  write_text(out / "sweep.svg", sweep_svg(rows));
  std::printf("%s", sweep_csv(rows).c_str());
  return 0;
}

// ----------------------------------------------------------------- gradcheck

int cmd_gradcheck(double tol, std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : full_gradient_suite(tol, seed)) {
    std::printf("%-36s %s  max_rel_error %.3e  (%zu entries)\n", r.name.c_str(), r.passed ? "PASS" : "FAIL",
                r.max_rel_error, r.entries_checked);
    ok = ok && r.passed;
  }
  std::printf("%s\n", ok ? "all gradient checks passed" : "gradient checks FAILED");
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------- plot

struct PlotArgs {
  std::string csv, out, x, title;
  std::vector<std::string> y;
  bool log = false;
};

int cmd_plot(const PlotArgs& a) {
  const auto t = read_csv(a.csv);
  const std::string xcol = a.x.empty() ? (std::find(t.header.begin(), t.header.end(), "step") != t.header.end()
                                               ? std::string("step")
                                               : t.header.front())
                                       : a.x;
  std::vector<std::string> ys = a.y;
  if (ys.empty())
    for (const auto& h : t.header)
      if (h != xcol && h != "epoch" && h != "lr") ys.push_back(h);
  std::vector<Series> series;
  try {
    const auto xs = t.values(xcol);
    for (const auto& y : ys) series.push_back({y, xs, t.values(y)});
  } catch (const std::out_of_range& e) {
    throw UsageError(e.what());
  }
  const std::string out = a.out.empty() ? fs::path(a.csv).replace_extension(".svg").string() : a.out;
  write_text(out, svg_line_chart(a.title.empty() ? fs::path(a.csv).filename().string() : a.title, xcol, "", series,
                                 a.log));
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Universal Physics Transformer toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a dataset directory");
  g->add_option("--task", gen.task, "tgv2d or diffusion2d")->required()->check(CLI::IsMember({"tgv2d", "diffusion2d"}));
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--k", gen.k, "Points per trajectory");
  g->add_option("--steps", gen.steps, "Frames per trajectory");
  g->add_option("--trajectories", gen.trajectories, "Number of trajectories");
  g->add_option("--dt", gen.dt, "Time between frames");
  g->add_option("--nu", gen.nu, "Viscosity (tgv2d)");
  g->add_option("--substeps", gen.substeps, "RK4 substeps per frame (tgv2d)");
  g->add_option("--kappa", gen.kappa, "Diffusivity (diffusion2d)");
  g->add_option("--n-blobs", gen.n_blobs, "Heat sources per trajectory (diffusion2d)");
  g->add_option("--precision", gen.precision, "Stored float width: f32 or f64");
  g->add_option("--config", gen.config, "Run config whose data section supplies defaults");
  g->add_option("--set", gen.sets, "Override a config leaf, e.g. data.k=512");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tr.config, "Run config (JSON)");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--resume", tr.resume, "Checkpoint to resume from");
  t->add_option("--set", tr.sets, "Override a config leaf, e.g. train.lr=1e-3");
  t->add_flag("--quiet", tr.quiet, "No per-epoch output");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "One-step MSE and correlation time");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--split", ev.split, "train, val or test");
  e->add_option("--out", ev.out, "Write the report as JSON");

  RolloutArgs ro;
  auto* r = app.add_subcommand("rollout", "Latent or autoregressive rollout");
  r->add_option("--checkpoint", ro.checkpoint)->required();
  r->add_option("--data", ro.data)->required();
  r->add_option("--out", ro.out, "Output directory")->required();
  r->add_option("--mode", ro.modes, "latent or autoregressive (repeatable)")
      ->check(CLI::IsMember({"latent", "autoregressive"}));
  r->add_option("--steps", ro.steps, "Rollout steps");
  r->add_option("--split", ro.split, "train, val or test");
  r->add_option("--traj", ro.traj, "Trajectory index within the split");
  r->add_option("--grid", ro.grid, "Also decode the latent rollout on an N^d grid");
  r->add_option("--seed", ro.seed, "Rollout seed");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "Discretization sweep over input points and supernodes");
  s->add_option("--checkpoint", sw.checkpoint)->required();
  s->add_option("--data", sw.data)->required();
  s->add_option("--out", sw.out, "Output directory")->required();
  s->add_option("--multipliers", sw.multipliers, "Input point multipliers");
  s->add_option("--supernode-factors", sw.supernode_factors, "n_s multipliers relative to training");

  double tol = 1e-4;
  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc->add_option("--tol", tol, "Max relative error");
  gc->add_option("--seed", gc_seed, "Seed for random inputs");

  PlotArgs pl;
  auto* p = app.add_subcommand("plot", "Render an SVG line chart from a CSV file");
  p->add_option("--csv", pl.csv)->required();
  p->add_option("--out", pl.out, "SVG path (default: CSV path with .svg)");
  p->add_option("--x", pl.x, "X column");
  p->add_option("--y", pl.y, "Y columns");
  p->add_option("--title", pl.title);
  p->add_flag("--log", pl.log, "Logarithmic y axis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 2;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*r) return cmd_rollout(ro);
    if (*s) return cmd_sweep(sw);
    if (*gc) return cmd_gradcheck(tol, gc_seed);
    if (*p) return cmd_plot(pl);
  } catch (const UsageError& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 2;
  } catch (const ConfigError& ex) {
    std::fprintf(stderr, "config error: %s\n", ex.what());
    return 2;
  } catch (const CsvError& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 2;
  } catch (const UnsupportedModeError& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 2;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return 2;
}
