#pragma once

// Desk-scale datasets with closed-form ground truth: tracer particles in a
// decaying 2D Taylor-Green vortex (Lagrangian) and sums of Gaussian heat
// kernels sampled on irregular point clouds (Eulerian).

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "upt/container.hpp"
#include "upt/geometry.hpp"
#include "upt/rng.hpp"

namespace upt {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Trajectory {
  std::vector<PointCloudFrame> frames;
  double dt = 0.0;
  nlohmann::json meta = nlohmann::json::object();

  std::size_t size() const { return frames.size(); }
  std::size_t points() const { return frames.empty() ? 0 : frames.front().size(); }

  /// Domain bounds per dimension from meta["bounds"].
  std::vector<Bounds> bounds() const {
    std::vector<Bounds> b;
    for (const auto& d : meta.at("bounds")) b.push_back({d.at(0).get<double>(), d.at(1).get<double>()});
    return b;
  }

  void validate() const {
    if (frames.empty()) throw ValueError("trajectory has no frames");
    if (!(dt > 0) || !std::isfinite(dt)) throw ValueError("trajectory dt must be positive");
    const auto k = frames.front().size();
    for (std::size_t n = 0; n < frames.size(); ++n) {
      const auto& f = frames[n];
      f.validate();
      if (f.size() != k) throw ValueError("trajectory frames have differing point counts");
      if (f.dim() != frames.front().dim() || f.channels() != frames.front().channels())
        throw ValueError("trajectory frames have differing dimensions");
      const double expect = frames.front().time + static_cast<double>(n) * dt;
      if (std::abs(f.time - expect) > 1e-9 * std::max(1.0, std::abs(expect)))
        throw ValueError("trajectory time spacing is not uniform");
    }
  }
};

// ---------------------------------------------------------------- Taylor-Green

struct Velocity2 {
  double u = 0, v = 0;
};

inline Velocity2 tgv2d_velocity(double x, double y, double t, double nu) {
  const double F = std::exp(-2.0 * nu * t);
  return {std::cos(x) * std::sin(y) * F, -std::sin(x) * std::cos(y) * F};
}

inline double tgv2d_pressure(double x, double y, double t, double nu) {
  const double F = std::exp(-2.0 * nu * t);
  return -0.25 * (std::cos(2 * x) + std::cos(2 * y)) * F * F;
}

struct TgvParams {
  double nu = 0.01;
  std::size_t k = 2500;
  std::size_t steps = 126;  // frames per trajectory
  double dt = 0.04;
  std::size_t substeps = 2;  // RK4 substeps per frame

  void validate() const {
    if (!(nu > 0)) throw ValueError("tgv2d: viscosity must be positive");
    if (k < 1) throw ValueError("tgv2d: need at least one particle");
    if (steps < 1) throw ValueError("tgv2d: need at least one frame");
    if (!(dt > 0)) throw ValueError("tgv2d: dt must be positive");
    if (substeps < 1) throw ValueError("tgv2d: substeps must be >= 1");
  }
};

inline double wrap_periodic(double x, double lo, double hi) {
  const double L = hi - lo;
  double y = std::fmod(x - lo, L);
  if (y < 0) y += L;
  if (y >= L) y = 0;
  return lo + y;
}

/// One classical RK4 step of dx/dt = u(x, t) through the analytic field.
inline std::pair<double, double> tgv2d_rk4(double x, double y, double t, double h, double nu) {
  auto f = [&](double px, double py, double pt) { return tgv2d_velocity(px, py, pt, nu); };
  const auto k1 = f(x, y, t);
  const auto k2 = f(x + 0.5 * h * k1.u, y + 0.5 * h * k1.v, t + 0.5 * h);
  const auto k3 = f(x + 0.5 * h * k2.u, y + 0.5 * h * k2.v, t + 0.5 * h);
  const auto k4 = f(x + h * k3.u, y + h * k3.v, t + h);
  return {x + h / 6 * (k1.u + 2 * k2.u + 2 * k3.u + k4.u), y + h / 6 * (k1.v + 2 * k2.v + 2 * k3.v + k4.v)};
}

inline nlohmann::json domain_bounds_json(const std::vector<Bounds>& b) {
  auto j = nlohmann::json::array();
  for (const auto& d : b) j.push_back({d.lo, d.hi});
  return j;
}

inline Trajectory generate_tgv2d(const TgvParams& p, Rng& rng) {
  p.validate();
  Trajectory traj;
  traj.dt = p.dt;
  const double t_end = static_cast<double>(p.steps - 1) * p.dt;
  traj.meta = {{"generator", "tgv2d"},
               {"nu", p.nu},
               {"dt", p.dt},
               {"substeps", p.substeps},
               {"bounds", domain_bounds_json({{0, kTwoPi}, {0, kTwoPi}})},
               {"conditions", {{"time", {0.0, t_end}}}},
               {"seed", rng.seed()}};
  std::vector<double> xs(p.k), ys(p.k);
  for (std::size_t i = 0; i < p.k; ++i) {
    xs[i] = rng.uniform(0, kTwoPi);
    ys[i] = rng.uniform(0, kTwoPi);
  }
  const double h = p.dt / static_cast<double>(p.substeps);
  for (std::size_t n = 0; n < p.steps; ++n) {
    const double t = static_cast<double>(n) * p.dt;
    PointCloudFrame f;
    f.time = t;
    f.positions = Tensor<double>({p.k, 2});
    f.features = Tensor<double>({p.k, 2});
    for (std::size_t i = 0; i < p.k; ++i) {
      f.positions(i, 0) = xs[i];
      f.positions(i, 1) = ys[i];
      const auto vel = tgv2d_velocity(xs[i], ys[i], t, p.nu);
      f.features(i, 0) = vel.u;
      f.features(i, 1) = vel.v;
    }
    traj.frames.push_back(std::move(f));
    for (std::size_t s = 0; s < p.substeps; ++s)
      for (std::size_t i = 0; i < p.k; ++i) {
        auto [nx, ny] = tgv2d_rk4(xs[i], ys[i], t + static_cast<double>(s) * h, h, p.nu);
        xs[i] = wrap_periodic(nx, 0, kTwoPi);
        ys[i] = wrap_periodic(ny, 0, kTwoPi);
      }
  }
  return traj;
}

struct NsResidual {
  double momentum = 0;    // max |du/dt + u.grad u + grad p - nu lap u| over the grid
  double divergence = 0;  // max |div u| over the grid
};

namespace detail {

// Sixth-order central stencils for first and second derivatives.
template <class F>
double d1(const F& f, double h) {
  return (-f(-3) + 9 * f(-2) - 45 * f(-1) + 45 * f(1) - 9 * f(2) + f(3)) / (60 * h);
}
template <class F>
double d2(const F& f, double h) {
  return (2 * f(-3) - 27 * f(-2) + 270 * f(-1) - 490 * f(0) + 270 * f(1) - 27 * f(2) + 2 * f(3)) / (180 * h * h);
}

}  // namespace detail

/// Finite-difference residual of the incompressible Navier-Stokes equations
/// (unit density, no forcing) for the analytic TGV field, sampled on an
/// n x n periodic grid over [0, 2pi)^2 with grid-spacing stencils. Time
/// derivatives use step dt_fd.
inline NsResidual tgv2d_ns_residual(double nu, double t, std::size_t n = 64, double dt_fd = 1e-3) {
  const double h = kTwoPi / static_cast<double>(n);
  auto X = [&](long i) { return h * static_cast<double>(i); };
  auto U = [&](long i, long j, double tt) { return tgv2d_velocity(X(i), X(j), tt, nu); };
  auto P = [&](long i, long j) { return tgv2d_pressure(X(i), X(j), t, nu); };
  NsResidual r;
  for (long i = 0; i < static_cast<long>(n); ++i)
    for (long j = 0; j < static_cast<long>(n); ++j) {
      const auto c = U(i, j, t);
      const double ux = detail::d1([&](int s) { return U(i + s, j, t).u; }, h);
      const double uy = detail::d1([&](int s) { return U(i, j + s, t).u; }, h);
      const double vx = detail::d1([&](int s) { return U(i + s, j, t).v; }, h);
      const double vy = detail::d1([&](int s) { return U(i, j + s, t).v; }, h);
      const double lap_u = detail::d2([&](int s) { return U(i + s, j, t).u; }, h) +
                           detail::d2([&](int s) { return U(i, j + s, t).u; }, h);
      const double lap_v = detail::d2([&](int s) { return U(i + s, j, t).v; }, h) +
                           detail::d2([&](int s) { return U(i, j + s, t).v; }, h);
      const double px = detail::d1([&](int s) { return P(i + s, j); }, h);
      const double py = detail::d1([&](int s) { return P(i, j + s); }, h);
      const double ut = detail::d1([&](int s) { return U(i, j, t + s * dt_fd).u; }, dt_fd);
      const double vt = detail::d1([&](int s) { return U(i, j, t + s * dt_fd).v; }, dt_fd);
      const double ru = ut + c.u * ux + c.v * uy + px - nu * lap_u;
      const double rv = vt + c.u * vx + c.v * vy + py - nu * lap_v;
      r.momentum = std::max({r.momentum, std::abs(ru), std::abs(rv)});
      r.divergence = std::max(r.divergence, std::abs(ux + vy));
    }
  return r;
}

// ------------------------------------------------------------------ Diffusion

struct HeatBlob {
  double cx = 0, cy = 0, amplitude = 1, t0 = 1;
};

/// Sum of 2D heat kernels on the unbounded plane.
struct DiffusionField {
  std::vector<HeatBlob> blobs;
  double kappa = 0.005;

  double operator()(double x, double y, double t) const {
    double s = 0;
    for (const auto& b : blobs) {
      const double tau = t + b.t0;
      const double r2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
      s += b.amplitude / (4 * std::numbers::pi * kappa * tau) * std::exp(-r2 / (4 * kappa * tau));
    }
    return s;
  }
};

inline void to_json(nlohmann::json& j, const HeatBlob& b) {
  j = {{"cx", b.cx}, {"cy", b.cy}, {"amplitude", b.amplitude}, {"t0", b.t0}};
}
inline void from_json(const nlohmann::json& j, HeatBlob& b) {
  j.at("cx").get_to(b.cx);
  j.at("cy").get_to(b.cy);
  j.at("amplitude").get_to(b.amplitude);
  j.at("t0").get_to(b.t0);
}

struct DiffusionParams {
  std::size_t k = 1024;
  std::size_t steps = 24;
  double dt = 0.5;
  double kappa = 0.005;
  std::size_t n_blobs = 2;
  double t0_lo = 0.5, t0_hi = 1.5;
  double amp_lo = 0.5, amp_hi = 1.5;

  void validate() const {
    if (!(kappa > 0)) throw ValueError("diffusion2d: kappa must be positive");
    if (k < 1) throw ValueError("diffusion2d: need at least one point");
    if (steps < 1) throw ValueError("diffusion2d: need at least one frame");
    if (!(dt > 0)) throw ValueError("diffusion2d: dt must be positive");
    if (n_blobs < 1) throw ValueError("diffusion2d: need at least one blob");
    if (!(t0_lo > 0) || t0_hi < t0_lo) throw ValueError("diffusion2d: invalid t0 range");
  }
};

/// k points in the unit square by dart throwing with minimum spacing
/// 0.6/sqrt(k); once 30 consecutive darts fail the rest are uniform.
inline Tensor<double> blue_noise_points(std::size_t k, Rng& rng) {
  const double r = 0.6 / std::sqrt(static_cast<double>(k));
  const auto cells = std::max<std::size_t>(1, static_cast<std::size_t>(1.0 / r));
  std::vector<std::vector<std::size_t>> grid(cells * cells);
  Tensor<double> pts({k, 2});
  auto cell = [&](double v) { return std::min(cells - 1, static_cast<std::size_t>(v * static_cast<double>(cells))); };
  std::size_t n = 0, fails = 0;
  bool relaxed = false;
  while (n < k) {
    const double x = rng.uniform(), y = rng.uniform();
    const std::size_t cx = cell(x), cy = cell(y);
    bool ok = true;
    if (!relaxed) {
      for (std::size_t gx = cx > 0 ? cx - 1 : 0; ok && gx <= std::min(cells - 1, cx + 1); ++gx)
        for (std::size_t gy = cy > 0 ? cy - 1 : 0; ok && gy <= std::min(cells - 1, cy + 1); ++gy)
          for (auto q : grid[gx * cells + gy]) {
            const double dx = pts(q, 0) - x, dy = pts(q, 1) - y;
            if (dx * dx + dy * dy < r * r) {
              ok = false;
              break;
            }
          }
    }
    if (!ok) {
      if (++fails >= 30) relaxed = true;
      continue;
    }
    fails = 0;
    pts(n, 0) = x;
    pts(n, 1) = y;
    grid[cx * cells + cy].push_back(n);
    ++n;
  }
  return pts;
}

inline DiffusionField random_diffusion_field(const DiffusionParams& p, Rng& rng) {
  DiffusionField f;
  f.kappa = p.kappa;
  for (std::size_t j = 0; j < p.n_blobs; ++j)
    f.blobs.push_back(
        {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(p.amp_lo, p.amp_hi), rng.uniform(p.t0_lo, p.t0_hi)});
  return f;
}

/// Samples `field` at fixed positions for p.steps frames.
inline Trajectory sample_diffusion(const DiffusionField& field, const DiffusionParams& p, const Tensor<double>& pts,
                                   std::uint64_t seed) {
  Trajectory traj;
  traj.dt = p.dt;
  traj.meta = {{"generator", "diffusion2d"},
               {"kappa", p.kappa},
               {"dt", p.dt},
               {"blobs", field.blobs},
               {"bounds", domain_bounds_json({{0, 1}, {0, 1}})},
               {"conditions", {{"time", {0.0, static_cast<double>(p.steps - 1) * p.dt}}}},
               {"seed", seed}};
  for (std::size_t n = 0; n < p.steps; ++n) {
    PointCloudFrame f;
    f.time = static_cast<double>(n) * p.dt;
    f.positions = pts;
    f.features = Tensor<double>({pts.rows(), 1});
    for (std::size_t i = 0; i < pts.rows(); ++i) f.features[i] = field(pts(i, 0), pts(i, 1), f.time);
    traj.frames.push_back(std::move(f));
  }
  return traj;
}

inline Trajectory generate_diffusion2d(const DiffusionParams& p, Rng& rng) {
  p.validate();
  const auto field = random_diffusion_field(p, rng);
  const auto pts = blue_noise_points(p.k, rng);
  return sample_diffusion(field, p, pts, rng.seed());
}

inline Trajectory generate_diffusion2d(std::size_t k, std::size_t T, double dt, double kappa, std::size_t n_blobs,
                                       Rng& rng) {
  DiffusionParams p;
  p.k = k;
  p.steps = T;
  p.dt = dt;
  p.kappa = kappa;
  p.n_blobs = n_blobs;
  return generate_diffusion2d(p, rng);
}

/// Field recorded in a diffusion trajectory's metadata.
inline DiffusionField diffusion_field_of(const Trajectory& traj) {
  if (traj.meta.value("generator", "") != "diffusion2d") throw ValueError("trajectory is not a diffusion2d trajectory");
  DiffusionField f;
  f.kappa = traj.meta.at("kappa").get<double>();
  f.blobs = traj.meta.at("blobs").get<std::vector<HeatBlob>>();
  return f;
}

namespace detail {

template <class F>
double d1_4(const F& f, double h) {
  return (f(-2) - 8 * f(-1) + 8 * f(1) - f(2)) / (12 * h);
}
template <class F>
double d2_4(const F& f, double h) {
  return (-f(-2) + 16 * f(-1) - 30 * f(0) + 16 * f(1) - f(2)) / (12 * h * h);
}

}  // namespace detail

/// max |ds/dt - kappa lap s| over n random points in [0,1]^2 x [0, t_max],
/// fourth-order central differences.
inline double heat_residual(const DiffusionField& f, double t_max, std::size_t n, Rng& rng, double h = 1e-3,
                            double ht = 1e-4) {
  double worst = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(), y = rng.uniform(), t = rng.uniform(0, t_max);
    const double st = detail::d1_4([&](int s) { return f(x, y, t + s * ht); }, ht);
    const double lap = detail::d2_4([&](int s) { return f(x + s * h, y, t); }, h) +
                       detail::d2_4([&](int s) { return f(x, y + s * h, t); }, h);
    worst = std::max(worst, std::abs(st - f.kappa * lap));
  }
  return worst;
}

// ----------------------------------------------------------------------- IO

inline constexpr char kTrajectoryMagic[] = "UPTD";

/// Positions are stored once when every frame shares them.
inline void write_trajectory(const Trajectory& traj, const std::filesystem::path& path,
                             Array::DType dtype = Array::DType::kF64) {
  traj.validate();
  const std::size_t T = traj.size(), k = traj.points(), dim = traj.frames[0].dim(), d = traj.frames[0].channels();
  bool static_pos = true;
  for (const auto& f : traj.frames) static_pos = static_pos && f.positions == traj.frames[0].positions;
  const std::size_t np = static_pos ? 1 : T;
  Tensor<double> pos({np, k, dim}), feat({T, k, d}), times({T});
  for (std::size_t n = 0; n < np; ++n) std::copy_n(traj.frames[n].positions.data(), k * dim, pos.data() + n * k * dim);
  for (std::size_t n = 0; n < T; ++n) {
    std::copy_n(traj.frames[n].features.data(), k * d, feat.data() + n * k * d);
    times[n] = traj.frames[n].time;
  }
  Container c;
  c.magic = kTrajectoryMagic;
  c.meta = {{"dt", traj.dt}, {"meta", traj.meta}, {"static_positions", static_pos}};
  auto put = [&](const std::string& name, const Tensor<double>& t) {
    c.arrays.push_back(dtype == Array::DType::kF32 ? Array::from(name, t.cast<float>()) : Array::from(name, t));
  };
  put("positions", pos);
  put("features", feat);
  c.arrays.push_back(Array::from("times", times));
  for (const auto& f : traj.frames) {
    if (f.conditions.empty()) continue;
    nlohmann::json conds = nlohmann::json::array();
    for (const auto& g : traj.frames) conds.push_back(g.conditions);
    c.meta["frame_conditions"] = conds;
    break;
  }
  write_container(c, path);
}

inline Trajectory read_trajectory(const std::filesystem::path& path) {
  const auto c = read_container(path, kTrajectoryMagic);
  Trajectory traj;
  try {
    traj.dt = c.meta.at("dt").get<double>();
    traj.meta = c.meta.at("meta");
    const auto pos = c.array("positions").to<double>();
    const auto feat = c.array("features").to<double>();
    const auto times = c.array("times").to<double>();
    if (pos.ndim() != 3 || feat.ndim() != 3) throw FormatError(path.string() + ": malformed trajectory arrays");
    const std::size_t T = feat.shape()[0], k = feat.shape()[1], d = feat.shape()[2], dim = pos.shape()[2];
    const bool static_pos = c.meta.at("static_positions").get<bool>();
    if (pos.shape()[1] != k || times.size() != T || pos.shape()[0] != (static_pos ? 1 : T))
      throw FormatError(path.string() + ": inconsistent trajectory array shapes");
    for (std::size_t n = 0; n < T; ++n) {
      PointCloudFrame f;
      f.time = times[n];
      const std::size_t pn = static_pos ? 0 : n;
      f.positions = Tensor<double>(
          {k, dim}, std::vector<double>(pos.data() + pn * k * dim, pos.data() + (pn + 1) * k * dim));
      f.features = Tensor<double>({k, d}, std::vector<double>(feat.data() + n * k * d, feat.data() + (n + 1) * k * d));
      if (c.meta.contains("frame_conditions"))
        f.conditions = c.meta["frame_conditions"].at(n).get<std::map<std::string, double>>();
      traj.frames.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed trajectory metadata: " + e.what());
  }
  traj.validate();
  return traj;
}

// -------------------------------------------------------------------- Split

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Seeded trajectory-level split. Counts are floor(f * n) for train and
/// val; test receives the remainder.
inline Split split_dataset(std::size_t n, std::array<double, 3> fractions, Rng& rng) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9 || fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0)
    throw ValueError("split_dataset: fractions must be non-negative and sum to 1");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);
  const auto n_train = static_cast<std::size_t>(std::floor(fractions[0] * static_cast<double>(n) + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(fractions[1] * static_cast<double>(n) + 1e-9));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<long>(n_train));
  s.val.assign(idx.begin() + static_cast<long>(n_train), idx.begin() + static_cast<long>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<long>(n_train + n_val), idx.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

}  // namespace upt
