#pragma once

// Dataset directories: trajectory files per split plus manifest.json with
// counts, the split and the PDE residual report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "upt/config.hpp"
#include "upt/datagen.hpp"

namespace upt {

class ResidualCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kNsMomentumTol = 1e-4;
inline constexpr double kNsDivergenceTol = 1e-6;
inline constexpr double kHeatTol = 1e-5;

inline Trajectory generate_trajectory(const DataConfig& d, std::size_t index) {
  Rng rng = Rng(d.seed).derive(index);
  if (d.task == "tgv2d") {
    TgvParams p;
    p.nu = d.nu;
    p.k = d.k;
    p.steps = d.steps;
    p.dt = d.dt;
    p.substeps = d.substeps;
    return generate_tgv2d(p, rng);
  }
  if (d.task == "diffusion2d") {
    DiffusionParams p;
    p.k = d.k;
    p.steps = d.steps;
    p.dt = d.dt;
    p.kappa = d.kappa;
    p.n_blobs = d.n_blobs;
    return generate_diffusion2d(p, rng);
  }
  throw ValueError("unknown task '" + d.task + "'");
}

/// Residual of the generating field. TGV: Navier-Stokes momentum and
/// divergence on a 64^2 grid at the first, middle and last frame times.
/// Diffusion: heat residual at 100 random space-time points per trajectory.
inline nlohmann::json residual_report(const DataConfig& d, const std::vector<Trajectory>& trajs) {
  nlohmann::json r;
  if (d.task == "tgv2d") {
    const double t_end = static_cast<double>(d.steps - 1) * d.dt;
    double mom = 0, div = 0;
    nlohmann::json times = nlohmann::json::array();
    for (double t : {0.0, 0.5 * t_end, t_end}) {
      const auto res = tgv2d_ns_residual(d.nu, t);
      mom = std::max(mom, res.momentum);
      div = std::max(div, res.divergence);
      times.push_back(t);
    }
    r = {{"check", "navier_stokes"}, {"grid", 64},         {"times", times},
         {"momentum_max", mom},      {"divergence_max", div}, {"momentum_tol", kNsMomentumTol},
         {"divergence_tol", kNsDivergenceTol}};
    r["passed"] = mom <= kNsMomentumTol && div <= kNsDivergenceTol;
  } else {
    double worst = 0;
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      Rng rng = Rng(d.seed).derive(0x686561740000ULL + i);
      const auto field = diffusion_field_of(trajs[i]);
      worst = std::max(worst, heat_residual(field, static_cast<double>(d.steps - 1) * d.dt, 100, rng));
    }
    r = {{"check", "heat_equation"}, {"points_per_trajectory", 100}, {"residual_max", worst}, {"tol", kHeatTol}};
    r["passed"] = worst <= kHeatTol;
  }
  return r;
}

struct GeneratedDataset {
  std::vector<Trajectory> trajectories;
  Split split;
  nlohmann::json residual;

  Dataset dataset() const {
    Dataset d;
    for (auto i : split.train) d.train.push_back(trajectories[i]);
    for (auto i : split.val) d.val.push_back(trajectories[i]);
    for (auto i : split.test) d.test.push_back(trajectories[i]);
    return d;
  }
};

/// Generates all trajectories, checks residuals and draws the split.
inline GeneratedDataset build_dataset(const DataConfig& d) {
  if (d.trajectories < 1) throw ValueError("data.trajectories must be >= 1");
  const double fsum = d.split[0] + d.split[1] + d.split[2];
  if (!(fsum > 0) || d.split[0] < 0 || d.split[1] < 0 || d.split[2] < 0)
    throw ValueError("data.split must hold non-negative weights with a positive sum");
  GeneratedDataset g;
  for (std::size_t i = 0; i < d.trajectories; ++i) g.trajectories.push_back(generate_trajectory(d, i));
  g.residual = residual_report(d, g.trajectories);
  if (!g.residual.at("passed").get<bool>())
    throw ResidualCheckError("PDE residual check failed: " + g.residual.dump());
  Rng split_rng = Rng(d.seed).derive(0x73706c6974ULL);
  g.split = split_dataset(d.trajectories, {d.split[0] / fsum, d.split[1] / fsum, d.split[2] / fsum}, split_rng);
  return g;
}

/// build_dataset, then the split directories and manifest. Nothing is
/// written when the residual check fails.
inline nlohmann::json generate_dataset(const DataConfig& d, const std::filesystem::path& out,
                                       Array::DType dtype = Array::DType::kF32) {
  const auto g = build_dataset(d);
  const auto& trajs = g.trajectories;
  const auto& split = g.split;
  nlohmann::json files = nlohmann::json::object();
  std::filesystem::create_directories(out);
  auto emit = [&](const char* name, const std::vector<std::size_t>& idx) {
    auto list = nlohmann::json::array();
    std::filesystem::create_directories(out / name);
    for (auto i : idx) {
      char fname[32];
      std::snprintf(fname, sizeof fname, "traj_%04zu.uptd", i);
      write_trajectory(trajs[i], out / name / fname, dtype);
      list.push_back(std::string(name) + "/" + fname);
    }
    files[name] = list;
  };
  emit("train", split.train);
  emit("val", split.val);
  emit("test", split.test);
  nlohmann::json manifest = {
      {"task", d.task},
      {"generator", d},
      {"precision", dtype == Array::DType::kF32 ? "f32" : "f64"},
      {"counts",
       {{"trajectories", d.trajectories},
        {"train", split.train.size()},
        {"val", split.val.size()},
        {"test", split.test.size()},
        {"frames", trajs[0].size()},
        {"points", trajs[0].points()}}},
      {"splits", files},
      {"residual_check", g.residual}};
  std::ofstream(out / "manifest.json", std::ios::trunc) << manifest.dump(2) << "\n";
  return manifest;
}

struct LoadedDataset {
  Dataset data;
  nlohmann::json manifest;
  std::string task;
};

/// Reads the manifest and the requested splits ("train", "val", "test").
inline LoadedDataset load_dataset(const std::filesystem::path& dir,
                                  const std::vector<std::string>& splits = {"train", "val", "test"}) {
  const auto mpath = dir / "manifest.json";
  std::ifstream f(mpath);
  if (!f) throw std::runtime_error("no dataset manifest at " + mpath.string());
  LoadedDataset out;
  out.manifest = nlohmann::json::parse(f, nullptr, false);
  if (out.manifest.is_discarded()) throw FormatError(mpath.string() + ": not valid JSON");
  try {
    out.task = out.manifest.at("task").get<std::string>();
    for (const auto& s : splits) {
      auto& dst = s == "train" ? out.data.train : s == "val" ? out.data.val : out.data.test;
      for (const auto& file : out.manifest.at("splits").at(s)) dst.push_back(read_trajectory(dir / file.get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(mpath.string() + ": malformed manifest: " + e.what());
  }
  return out;
}

}  // namespace upt
