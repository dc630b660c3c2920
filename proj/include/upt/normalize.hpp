#pragma once

// Robust per-channel normalization and signed log scaling.

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "upt/tensor.hpp"

namespace upt {

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Inverse of normal_cdf by bisection, accurate to ~1e-15.
inline double normal_quantile(double p) {
  if (!(p > 0 && p < 1)) throw ValueError("normal_quantile: p must lie in (0, 1)");
  double lo = -40, hi = 40;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Half-width of the inter-quartile range of a unit Gaussian.
inline double iqr_z() {
  static const double z = normal_quantile(0.75);
  return z;
}

inline double log_scale(double x) { return std::copysign(std::log1p(std::abs(x)), x); }
inline double inv_log_scale(double y) { return std::copysign(std::expm1(std::abs(y)), y); }

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
  bool log = false;

  std::size_t channels() const { return mean.size(); }

  /// Standardize, then (optionally) signed log scale.
  double forward(double x, std::size_t c) const {
    const double u = (x - mean[c]) / std[c];
    return log ? log_scale(u) : u;
  }
  double inverse(double y, std::size_t c) const { return (log ? inv_log_scale(y) : y) * std[c] + mean[c]; }

  /// Applies the transform column-wise; cols must equal channels().
  template <class T>
  Tensor<T> normalize(const Tensor<double>& x) const {
    check(x);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<T>(forward(x[i], i % x.cols()));
    return out;
  }

  template <class T>
  Tensor<double> denormalize(const Tensor<T>& y) const {
    check(y);
    Tensor<double> out(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = inverse(static_cast<double>(y[i]), i % y.cols());
    return out;
  }

 private:
  template <class T>
  void check(const Tensor<T>& x) const {
    if (x.cols() != channels())
      throw DimensionError("normalization expects " + std::to_string(channels()) + " channels, got " +
                           std::to_string(x.cols()));
  }
};

inline void to_json(nlohmann::json& j, const NormStats& s) { j = {{"mean", s.mean}, {"std", s.std}, {"log", s.log}}; }

inline void from_json(const nlohmann::json& j, NormStats& s) {
  j.at("mean").get_to(s.mean);
  j.at("std").get_to(s.std);
  j.at("log").get_to(s.log);
  if (s.mean.size() != s.std.size()) throw ValueError("norm stats: mean/std length mismatch");
}

namespace detail {

inline void mean_std(const std::vector<double>& v, double& mean, double& std) {
  double s = 0;
  for (double x : v) s += x;
  mean = s / static_cast<double>(v.size());
  double q = 0;
  for (double x : v) q += (x - mean) * (x - mean);
  std = std::sqrt(q / static_cast<double>(v.size()));
}

}  // namespace detail

/// Robust mean/std per channel: naive moments, keep samples inside
/// mean +- z*std with z = Phi^-1(0.75), then moments of the kept samples.
/// If fewer than two samples fall inside the band the naive moments stand.
/// samples: n x C. `log` only sets the flag of the result.
inline NormStats robust_stats(const Tensor<double>& samples, bool log = false) {
  const std::size_t n = samples.rows(), C = samples.cols();
  if (n < 2) throw ValueError("robust_stats: need at least 2 samples per channel");
  NormStats out;
  out.log = log;
  const double z = iqr_z();
  std::vector<double> col(n), kept;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < n; ++i) col[i] = samples(i, c);
    double mu, sigma;
    detail::mean_std(col, mu, sigma);
    kept.clear();
    for (double x : col)
      if (x >= mu - z * sigma && x <= mu + z * sigma) kept.push_back(x);
    if (kept.size() >= 2) detail::mean_std(kept, mu, sigma);
    if (!(sigma > 0)) throw ValueError("robust_stats: channel " + std::to_string(c) + " has zero variance");
    out.mean.push_back(mu);
    out.std.push_back(sigma);
  }
  return out;
}

}  // namespace upt
