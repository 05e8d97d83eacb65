#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "otcf/common.hpp"

namespace otcf {

enum class DistMode { atomic, continuous };

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  if (n < 2) throw std::invalid_argument("linspace: need n >= 2");
  if (!(hi > lo)) throw std::invalid_argument("linspace: need hi > lo");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  g.back() = hi;
  return g;
}

/// Midpoints (k+1/2)/n of a uniform partition of (0,1); the quadrature
/// grid used for all integrals over quantile levels.
inline std::vector<double> midpoint_grid(std::size_t n) {
  if (n < 2) throw std::invalid_argument("midpoint_grid: need n >= 2");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
  return g;
}

/// Grid spanning [lo,hi] expanded by `pad` on each side (default 5%).
inline std::vector<double> padded_grid(double lo, double hi, std::size_t n,
                                       double pad = 0.05) {
  if (!(hi >= lo)) throw std::invalid_argument("padded_grid: hi < lo");
  double range = hi - lo;
  if (range <= 0.0) range = std::max(1.0, std::abs(lo));
  return linspace(lo - pad * range, hi + pad * range, n);
}

inline constexpr std::size_t kDefaultGridSize = 512;

/// A one-dimensional probability law stored as a monotone cdf over a
/// strictly increasing support grid. Atomic mode is a right-continuous
/// step function; continuous mode interpolates the cdf (and its inverse)
/// piecewise-linearly. Immutable after construction.
class Dist1D {
 public:
  Dist1D(std::vector<double> support, std::vector<double> cdf, DistMode mode)
      : support_(std::move(support)), cdf_(std::move(cdf)), mode_(mode) {
    validate();
  }

  /// Atomic law from weighted samples: atoms at the sorted unique values,
  /// cdf = normalized cumulative weights.
  static Dist1D from_samples(std::span<const double> values,
                             std::span<const double> weights) {
    if (values.empty()) throw std::invalid_argument("from_samples: empty input");
    if (values.size() != weights.size())
      throw std::invalid_argument("from_samples: length mismatch");
    double total = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw std::invalid_argument("from_samples: negative weight");
      total += w;
    }
    if (!(total > 0.0))
      throw std::invalid_argument("from_samples: weights sum to zero");
    std::vector<std::size_t> order(values.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return values[a] < values[b];
    });
    std::vector<double> atoms;
    std::vector<double> cum;
    double running = 0.0;
    for (std::size_t idx : order) {
      const double v = values[idx];
      const double w = weights[idx];
      running += w;
      if (w == 0.0 && (atoms.empty() || atoms.back() != v)) continue;
      if (!atoms.empty() && atoms.back() == v) {
        cum.back() = running;
      } else {
        atoms.push_back(v);
        cum.push_back(running);
      }
    }
    for (double& c : cum) c /= total;
    cum.back() = 1.0;
    return Dist1D(std::move(atoms), std::move(cum), DistMode::atomic);
  }

  static Dist1D from_samples(std::span<const double> values) {
    std::vector<double> w(values.size(), 1.0);
    return from_samples(values, w);
  }

  static Dist1D point_mass(double y) {
    return Dist1D({y}, {1.0}, DistMode::atomic);
  }

  /// Continuous law from cdf values sampled on a grid. Values are clamped
  /// to [0,1], monotonized by running maximum and the terminal value is
  /// forced to 1 (estimators feed raw kernel output through here).
  static Dist1D from_cdf_grid(std::vector<double> support,
                              std::vector<double> cdf) {
    if (support.size() != cdf.size() || support.empty())
      throw std::invalid_argument("from_cdf_grid: bad shapes");
    double run = 0.0;
    for (double& c : cdf) {
      c = std::clamp(c, 0.0, 1.0);
      run = std::max(run, c);
      c = run;
    }
    cdf.back() = 1.0;
    return Dist1D(std::move(support), std::move(cdf), DistMode::continuous);
  }

  /// Continuous law from its quantile function sampled at increasing
  /// levels u (the last level must be 1). Flat stretches of the quantile
  /// function collapse to a single support point carrying the upper level.
  static Dist1D from_quantile_grid(std::span<const double> u,
                                   std::span<const double> q) {
    if (u.size() != q.size() || u.empty())
      throw std::invalid_argument("from_quantile_grid: bad shapes");
    std::vector<double> support;
    std::vector<double> cdf;
    const double scale =
        std::max(1.0, std::max(std::abs(q.front()), std::abs(q.back())));
    const double min_gap = 1e-13 * scale;
    for (std::size_t i = 0; i < u.size(); ++i) {
      if (i + 1 < u.size() && !(u[i + 1] > u[i]))
        throw std::invalid_argument("from_quantile_grid: u not increasing");
      if (i + 1 < q.size() && q[i + 1] < q[i] - min_gap)
        throw std::invalid_argument("from_quantile_grid: q decreasing");
      if (!support.empty() && q[i] <= support.back() + min_gap) {
        cdf.back() = u[i];
      } else {
        support.push_back(q[i]);
        cdf.push_back(u[i]);
      }
    }
    if (std::abs(cdf.back() - 1.0) > 1e-9)
      throw std::invalid_argument("from_quantile_grid: last level must be 1");
    cdf.back() = 1.0;
    return Dist1D(std::move(support), std::move(cdf), DistMode::continuous);
  }

  double cdf_at(double y) const {
    if (y < support_.front()) return 0.0;
    if (y >= support_.back()) return (mode_ == DistMode::atomic) ? cdf_.back()
                                                                 : 1.0;
    // index of last support point <= y
    auto it = std::upper_bound(support_.begin(), support_.end(), y);
    const std::size_t j = static_cast<std::size_t>(it - support_.begin()) - 1;
    if (mode_ == DistMode::atomic) return cdf_[j];
    const double s0 = support_[j], s1 = support_[j + 1];
    const double c0 = cdf_[j], c1 = cdf_[j + 1];
    return c0 + (c1 - c0) * (y - s0) / (s1 - s0);
  }

  /// Left limit P(Y < y); differs from cdf_at only at atoms.
  double cdf_at_left(double y) const {
    if (y <= support_.front()) return 0.0;
    if (mode_ == DistMode::continuous) {
      return (y >= support_.back()) ? 1.0 : cdf_at(y);
    }
    auto it = std::lower_bound(support_.begin(), support_.end(), y);
    const std::size_t j = static_cast<std::size_t>(it - support_.begin());
    return (j == 0) ? 0.0 : cdf_[j - 1];
  }

  /// Left-continuous generalized inverse inf{y : F(y) >= u}; flat cdf
  /// stretches resolve to the smallest y. Continuous mode interpolates.
  double quantile_at(double u) const {
    if (u < 0.0 || u > 1.0)
      throw std::invalid_argument("quantile_at: u outside [0,1]");
    auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) return support_.back();
    const std::size_t j = static_cast<std::size_t>(it - cdf_.begin());
    if (mode_ == DistMode::atomic) return support_[j];
    if (j == 0) return support_.front();
    const double c0 = cdf_[j - 1], c1 = cdf_[j];
    if (!(c1 > c0)) return support_[j];
    const double t = (u - c0) / (c1 - c0);
    return support_[j - 1] + t * (support_[j] - support_[j - 1]);
  }

  /// Density as the grid slope of a continuous cdf (0 outside the support
  /// and on the atom carried by the left endpoint).
  double density_at(double y) const {
    if (mode_ != DistMode::continuous)
      throw std::invalid_argument("density_at: atomic law has no density");
    if (support_.size() < 2) return 0.0;
    if (y < support_.front() || y >= support_.back()) return 0.0;
    auto it = std::upper_bound(support_.begin(), support_.end(), y);
    const std::size_t j = static_cast<std::size_t>(it - support_.begin()) - 1;
    return (cdf_[j + 1] - cdf_[j]) / (support_[j + 1] - support_[j]);
  }

  double mean() const {
    if (mode_ == DistMode::atomic) {
      double m = 0.0, prev = 0.0;
      for (std::size_t i = 0; i < support_.size(); ++i) {
        m += (cdf_[i] - prev) * support_[i];
        prev = cdf_[i];
      }
      return m;
    }
    double m = cdf_.front() * support_.front();
    for (std::size_t i = 0; i + 1 < support_.size(); ++i) {
      m += (cdf_[i + 1] - cdf_[i]) * 0.5 * (support_[i] + support_[i + 1]);
    }
    return m;
  }

  double variance() const {
    const double m = mean();
    if (mode_ == DistMode::atomic) {
      double v = 0.0, prev = 0.0;
      for (std::size_t i = 0; i < support_.size(); ++i) {
        v += (cdf_[i] - prev) * (support_[i] - m) * (support_[i] - m);
        prev = cdf_[i];
      }
      return v;
    }
    // exact second moment of the piecewise-linear cdf
    double s2 = cdf_.front() * support_.front() * support_.front();
    for (std::size_t i = 0; i + 1 < support_.size(); ++i) {
      const double a = support_[i], b = support_[i + 1];
      const double dm = cdf_[i + 1] - cdf_[i];
      s2 += dm * (a * a + a * b + b * b) / 3.0;
    }
    return s2 - m * m;
  }

  /// Atom masses (successive cdf differences). Atomic mode only.
  std::vector<double> atom_weights() const {
    if (mode_ != DistMode::atomic)
      throw std::invalid_argument("atom_weights: continuous law");
    std::vector<double> w(support_.size());
    double prev = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = cdf_[i] - prev;
      prev = cdf_[i];
    }
    return w;
  }

  DistMode mode() const { return mode_; }
  const std::vector<double>& support() const { return support_; }
  const std::vector<double>& cdf() const { return cdf_; }
  std::size_t size() const { return support_.size(); }
  double min_support() const { return support_.front(); }
  double max_support() const { return support_.back(); }

 private:
  void validate() {
    if (support_.empty() || support_.size() != cdf_.size())
      throw std::invalid_argument("Dist1D: bad shapes");
    for (std::size_t i = 0; i + 1 < support_.size(); ++i) {
      if (!(support_[i + 1] > support_[i]))
        throw std::invalid_argument("Dist1D: support not strictly increasing");
      if (cdf_[i + 1] < cdf_[i] - 1e-12)
        throw std::invalid_argument("Dist1D: cdf not nondecreasing");
      if (cdf_[i + 1] < cdf_[i]) cdf_[i + 1] = cdf_[i];
    }
    for (double c : cdf_) {
      if (c < -1e-12 || c > 1.0 + 1e-12)
        throw std::invalid_argument("Dist1D: cdf outside [0,1]");
    }
    if (std::abs(cdf_.back() - 1.0) > 1e-9)
      throw std::invalid_argument("Dist1D: terminal cdf value must be 1");
    cdf_.back() = 1.0;
    for (double& c : cdf_) c = std::clamp(c, 0.0, 1.0);
  }

  std::vector<double> support_;
  std::vector<double> cdf_;
  DistMode mode_;
};

/// Discretize an analytic cdf on a grid (continuous mode).
template <typename F>
Dist1D discretize_cdf(F&& cdf_fn, const std::vector<double>& grid) {
  std::vector<double> c(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) c[i] = cdf_fn(grid[i]);
  return Dist1D::from_cdf_grid(grid, std::move(c));
}

}  // namespace otcf
