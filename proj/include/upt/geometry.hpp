#pragma once

// Point-cloud preprocessing: position rescaling, supernode sampling and the
// capped radius graph that routes messages from input points to supernodes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "upt/rng.hpp"
#include "upt/tensor.hpp"

namespace upt {

/// One time slice of a simulation.
struct PointCloudFrame {
  Tensor<double> positions;  // k x dim, raw simulation units
  Tensor<double> features;   // k x d
  double time = 0.0;
  std::map<std::string, double> conditions;

  std::size_t size() const { return positions.rows(); }
  std::size_t dim() const { return positions.cols(); }
  std::size_t channels() const { return features.cols(); }

  /// Throws ValueError when row counts disagree or any entry is non-finite.
  void validate() const {
    if (positions.empty() || features.empty()) throw ValueError("frame must contain at least one point");
    if (positions.rows() != features.rows())
      throw ValueError("frame positions have " + std::to_string(positions.rows()) + " rows but features have " +
                       std::to_string(features.rows()));
    if (!positions.all_finite() || !features.all_finite() || !std::isfinite(time))
      throw ValueError("frame contains non-finite values");
    for (const auto& [name, v] : conditions)
      if (!std::isfinite(v)) throw ValueError("condition '" + name + "' is non-finite");
  }
};

/// Directed edges from input points to supernode slots.
struct SupernodeGraph {
  Index supernode_idx;  // n_s point indices
  Index edges_from;     // source point per edge
  Index edges_to;       // destination slot per edge, in [0, n_s)

  std::size_t num_supernodes() const { return supernode_idx.size(); }
  std::size_t num_edges() const { return edges_from.size(); }
};

struct Bounds {
  double lo = 0.0;
  double hi = 1.0;
};

constexpr double kPositionScale = 200.0;

/// Affine per-dimension map of positions from `bounds` onto [0, target_max].
template <class T>
Tensor<T> rescale_positions(const Tensor<T>& positions, const std::vector<Bounds>& bounds,
                            double target_max = kPositionScale) {
  const std::size_t dim = positions.cols();
  if (bounds.size() != dim)
    throw DimensionError("rescale_positions: " + std::to_string(bounds.size()) + " bounds for " +
                         std::to_string(dim) + " dimensions");
  for (const auto& b : bounds)
    if (!(b.hi > b.lo)) throw ValueError("rescale_positions: degenerate bounds (min >= max)");
  Tensor<T> out(positions.shape());
  for (std::size_t r = 0; r < positions.rows(); ++r)
    for (std::size_t c = 0; c < dim; ++c) {
      const double x = positions(r, c);
      const auto& b = bounds[c];
      // Endpoints map exactly onto {0, target_max}.
      double y = (x - b.lo) / (b.hi - b.lo) * target_max;
      if (x == b.lo) y = 0.0;
      if (x == b.hi) y = target_max;
      out(r, c) = static_cast<T>(y);
    }
  return out;
}

inline double squared_distance(const Tensor<double>& pos, std::size_t a, std::size_t b) {
  double s = 0;
  for (std::size_t c = 0; c < pos.cols(); ++c) {
    const double d = pos(a, c) - pos(b, c);
    s += d * d;
  }
  return s;
}

/// n_s distinct indices drawn uniformly without replacement from [0, k).
inline Index sample_supernodes(std::size_t k, std::size_t n_s, Rng& rng) {
  if (n_s == 0) throw ValueError("sample_supernodes: n_s must be >= 1");
  if (n_s > k)
    throw ValueError("sample_supernodes: n_s=" + std::to_string(n_s) + " exceeds point count " + std::to_string(k));
  Index idx(k);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: the first n_s slots form a uniform sample.
  for (std::size_t i = 0; i < n_s; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(k - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n_s);
  return idx;
}

/// All (point -> supernode) pairs within `radius`. Supernodes with more than
/// `max_degree` in-radius neighbours keep their self edge plus a uniformly
/// random subset of the rest, `max_degree` edges in total.
///
/// Edges are emitted grouped by slot, in ascending source order within a slot.
inline SupernodeGraph build_radius_graph(const Tensor<double>& positions, const Index& supernode_idx, double radius,
                                         std::size_t max_degree, Rng& rng) {
  if (!(radius > 0)) throw ValueError("build_radius_graph: radius must be positive");
  if (max_degree < 1) throw ValueError("build_radius_graph: max_degree must be >= 1");
  const std::size_t k = positions.rows();
  {
    Index sorted = supernode_idx;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ValueError("build_radius_graph: supernode indices must be distinct");
    if (!sorted.empty() && sorted.back() >= k) throw IndexError("build_radius_graph: supernode index out of range");
  }
  const double r2 = radius * radius;
  SupernodeGraph g;
  g.supernode_idx = supernode_idx;
  Index neighbours;
  for (std::size_t slot = 0; slot < supernode_idx.size(); ++slot) {
    const std::size_t s = supernode_idx[slot];
    neighbours.clear();
    for (std::size_t p = 0; p < k; ++p)
      if (p != s && squared_distance(positions, p, s) <= r2) neighbours.push_back(p);
    if (neighbours.size() + 1 > max_degree) {
      for (std::size_t i = 0; i + 1 < max_degree; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(neighbours.size() - i));
        std::swap(neighbours[i], neighbours[j]);
      }
      neighbours.resize(max_degree - 1);
    }
    neighbours.push_back(s);
    std::sort(neighbours.begin(), neighbours.end());
    for (auto p : neighbours) {
      g.edges_from.push_back(p);
      g.edges_to.push_back(slot);
    }
  }
  return g;
}

/// Graph where every point is its own supernode with only a self edge.
inline SupernodeGraph identity_graph(std::size_t k) {
  SupernodeGraph g;
  g.supernode_idx.resize(k);
  std::iota(g.supernode_idx.begin(), g.supernode_idx.end(), std::size_t{0});
  g.edges_from = g.supernode_idx;
  g.edges_to = g.supernode_idx;
  return g;
}

/// Mean number of other points within `radius` of each of the given centres.
inline double mean_neighbour_count(const Tensor<double>& positions, const Index& centres, double radius) {
  const double r2 = radius * radius;
  std::size_t total = 0;
  for (auto s : centres)
    for (std::size_t p = 0; p < positions.rows(); ++p)
      if (p != s && squared_distance(positions, p, s) <= r2) ++total;
  return static_cast<double>(total) / static_cast<double>(centres.size());
}

/// Radius at which the mean in-radius neighbour count (self excluded, no cap)
/// is close to `target_degree`, found by bisection. At most `max_centres`
/// points serve as centres; every point serves as a neighbour.
inline double calibrate_radius(const Tensor<double>& positions, double target_degree = 24.0,
                               std::size_t max_centres = 512, std::uint64_t seed = 0) {
  const std::size_t k = positions.rows();
  if (k < 2) throw ValueError("calibrate_radius: need at least 2 points");
  if (!(target_degree > 0)) throw ValueError("calibrate_radius: target degree must be positive");
  double max_d2 = 0;
  // Diameter bound from the bounding box.
  for (std::size_t c = 0; c < positions.cols(); ++c) {
    double lo = positions(0, c), hi = positions(0, c);
    for (std::size_t r = 1; r < k; ++r) {
      lo = std::min(lo, positions(r, c));
      hi = std::max(hi, positions(r, c));
    }
    max_d2 += (hi - lo) * (hi - lo);
  }
  if (max_d2 == 0) throw ValueError("calibrate_radius: all points coincide");
  Index centres;
  if (k <= max_centres) {
    centres.resize(k);
    std::iota(centres.begin(), centres.end(), std::size_t{0});
  } else {
    Rng rng(seed);
    centres = sample_supernodes(k, max_centres, rng);
  }
  const double diameter = std::sqrt(max_d2) * (1 + 1e-12);
  // Smallest radius whose mean count reaches `goal`.
  auto smallest_reaching = [&](double goal) {
    double lo = 0.0, hi = diameter;
    if (mean_neighbour_count(positions, centres, hi) < goal) return hi;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mean_neighbour_count(positions, centres, mid) < goal) lo = mid;
      else hi = mid;
    }
    return hi;
  };
  const double r = smallest_reaching(target_degree);
  // Counts jump in integer steps on regular layouts; if crossing the target
  // overshoots the +-20% band, fall back to the band's lower edge.
  if (mean_neighbour_count(positions, centres, r) > 1.2 * target_degree)
    return smallest_reaching(0.8 * target_degree);
  return r;
}

/// Keeps a uniform random subset of rows, with the kept count drawn uniformly
/// from round(fraction * k) for fraction in [lo, hi]. Row order is preserved.
inline PointCloudFrame subsample_points(const PointCloudFrame& frame, double lo, double hi, Rng& rng) {
  if (!(lo > 0) || !(hi >= lo) || hi > 1) throw ValueError("subsample_points: need 0 < lo <= hi <= 1");
  const std::size_t k = frame.size();
  const auto n_lo = static_cast<std::size_t>(std::llround(lo * static_cast<double>(k)));
  const auto n_hi = static_cast<std::size_t>(std::llround(hi * static_cast<double>(k)));
  const std::size_t n = n_lo + static_cast<std::size_t>(rng.below(n_hi - n_lo + 1));
  if (n < 1) throw ValueError("subsample_points: resulting point count is zero");
  Index keep(k);
  std::iota(keep.begin(), keep.end(), std::size_t{0});
  if (n < k) keep = sample_supernodes(k, n, rng);
  std::sort(keep.begin(), keep.end());
  PointCloudFrame out;
  out.time = frame.time;
  out.conditions = frame.conditions;
  out.positions = Tensor<double>({n, frame.dim()});
  out.features = Tensor<double>({n, frame.channels()});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(frame.positions.row(keep[i]).data(), frame.dim(), out.positions.row(i).data());
    std::copy_n(frame.features.row(keep[i]).data(), frame.channels(), out.features.row(i).data());
  }
  return out;
}

/// Rows `idx` of a matrix.
template <class T>
Tensor<T> take_rows(const Tensor<T>& m, const Index& idx) {
  Tensor<T> out({idx.size(), m.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m.rows()) throw IndexError("take_rows: index out of range");
    std::copy_n(m.row(idx[i]).data(), m.cols(), out.row(i).data());
  }
  return out;
}

}  // namespace upt
