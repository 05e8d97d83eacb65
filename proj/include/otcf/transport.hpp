#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "otcf/dist1d.hpp"

namespace otcf {

inline constexpr std::size_t kDefaultQuadPoints = 1024;
inline constexpr double kCouplingMarginTol = 1e-12;

/// Joint law of a pair of atomic marginals as a dense mass matrix.
/// mass[i][j] is the probability of the atom pair
/// (row_marginal.support()[i], col_marginal.support()[j]).
struct Coupling {
  Dist1D row_marginal;
  Dist1D col_marginal;
  std::vector<std::vector<double>> mass;

  double total_mass() const {
    double t = 0.0;
    for (const auto& row : mass)
      for (double m : row) t += m;
    return t;
  }

  /// Expected squared displacement sum m_ij (y_j - x_i)^2.
  double quadratic_cost() const {
    const auto& xs = row_marginal.support();
    const auto& ys = col_marginal.support();
    double c = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i)
      for (std::size_t j = 0; j < ys.size(); ++j)
        c += mass[i][j] * (ys[j] - xs[i]) * (ys[j] - xs[i]);
    return c;
  }

  /// E[X*Y] under the coupling.
  double cross_moment() const {
    const auto& xs = row_marginal.support();
    const auto& ys = col_marginal.support();
    double c = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i)
      for (std::size_t j = 0; j < ys.size(); ++j)
        c += mass[i][j] * xs[i] * ys[j];
    return c;
  }

  /// Joint cdf J(x,y) of the coupling.
  double joint_cdf(double x, double y) const {
    const auto& xs = row_marginal.support();
    const auto& ys = col_marginal.support();
    double c = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (xs[i] > x) break;
      for (std::size_t j = 0; j < ys.size(); ++j) {
        if (ys[j] > y) break;
        c += mass[i][j];
      }
    }
    return c;
  }

  double max_marginal_error() const {
    const auto rw = row_marginal.atom_weights();
    const auto cw = col_marginal.atom_weights();
    double err = 0.0;
    for (std::size_t i = 0; i < rw.size(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cw.size(); ++j) s += mass[i][j];
      err = std::max(err, std::abs(s - rw[i]));
    }
    for (std::size_t j = 0; j < cw.size(); ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < rw.size(); ++i) s += mass[i][j];
      err = std::max(err, std::abs(s - cw[j]));
    }
    return err;
  }
};

namespace detail {

inline void require_atomic(const Dist1D& d, const char* where) {
  if (d.mode() != DistMode::atomic)
    throw std::invalid_argument(std::string(where) + ": atomic law required");
}

/// Merged breakpoints of two step quantile functions; evaluating any
/// integrand of the quantiles at segment midpoints integrates exactly.
inline std::vector<double> merged_levels(const Dist1D& p, const Dist1D& q,
                                         bool reflect_first) {
  std::vector<double> levels;
  levels.reserve(p.size() + q.size() + 2);
  levels.push_back(0.0);
  for (double c : p.cdf()) levels.push_back(reflect_first ? 1.0 - c : c);
  for (double c : q.cdf()) levels.push_back(c);
  levels.push_back(1.0);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  while (!levels.empty() && levels.front() < 0.0) levels.erase(levels.begin());
  return levels;
}

}  // namespace detail

/// The 1-D optimal transport map from P to Q evaluated at y:
/// Q^{-1}(P(y)) with the generalized-inverse convention for atoms.
inline double ot_map_1d(const Dist1D& P, const Dist1D& Q, double y) {
  return Q.quantile_at(P.cdf_at(y));
}

/// \int_0^1 g(P^{-1}(u), Q^{-1}(u)) du. Exact via merged breakpoints when
/// both laws are atomic, midpoint quadrature on n_quad points otherwise.
template <typename G>
double quantile_pair_integral(const Dist1D& P, const Dist1D& Q, std::size_t n_quad,
                              G&& g, bool reflect_first = false) {
  if (P.mode() == DistMode::atomic && Q.mode() == DistMode::atomic) {
    const auto levels = detail::merged_levels(P, Q, reflect_first);
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < levels.size(); ++k) {
      const double du = levels[k + 1] - levels[k];
      if (du <= 0.0) continue;
      const double u = 0.5 * (levels[k] + levels[k + 1]);
      const double pu = reflect_first ? 1.0 - u : u;
      acc += du * g(P.quantile_at(pu), Q.quantile_at(u));
    }
    return acc;
  }
  if (n_quad < 2)
    throw std::invalid_argument("quantile_pair_integral: n_quad >= 2 required");
  double acc = 0.0;
  for (std::size_t k = 0; k < n_quad; ++k) {
    const double u =
        (static_cast<double>(k) + 0.5) / static_cast<double>(n_quad);
    const double pu = reflect_first ? 1.0 - u : u;
    acc += g(P.quantile_at(pu), Q.quantile_at(u));
  }
  return acc / static_cast<double>(n_quad);
}

/// Squared quantile-difference integral \int (Q^{-1}(u) - P^{-1}(u))^2 du;
/// the Frechet-Hoeffding lower bound on E[(Y(1)-Y(0))^2] attained by the
/// comonotone coupling.
inline double conservative_psi_lower_binary(const Dist1D& F0, const Dist1D& F1,
                                            std::size_t n_quad = kDefaultQuadPoints) {
  return quantile_pair_integral(
      F0, F1, n_quad, [](double a, double b) { return (b - a) * (b - a); });
}

/// 2-Wasserstein distance between one-dimensional laws.
inline double w2_distance(const Dist1D& P, const Dist1D& Q,
                          std::size_t n_quad = kDefaultQuadPoints) {
  return std::sqrt(conservative_psi_lower_binary(P, Q, n_quad));
}

/// Pointwise Frechet-Hoeffding envelope on the joint cdf J(y0,y1):
/// L = max{F0(y0)+F1(y1)-1, 0}, U = min{F0(y0), F1(y1)}.
inline std::pair<double, double> fh_cdf_bounds(const Dist1D& F0,
                                               const Dist1D& F1, double y0,
                                               double y1) {
  const double a = F0.cdf_at(y0);
  const double b = F1.cdf_at(y1);
  return {std::max(a + b - 1.0, 0.0), std::min(a, b)};
}

/// Bounds on G(t) = P(Y(1)-Y(0) <= t): G_L = sup_z max{F1(z)-F0(z-t), 0}
/// and G_U = 1 + inf_z min{F1(z)-F0(z-t), 0}, the sup/inf taken over
/// z_grid. F0 enters through its left limit, which keeps the bounds
/// sharp when the laws carry atoms.
inline std::pair<double, double> fh_difference_cdf_bounds(
    const Dist1D& F0, const Dist1D& F1, double t,
    std::span<const double> z_grid) {
  if (z_grid.empty())
    throw std::invalid_argument("fh_difference_cdf_bounds: empty z grid");
  double lo = 0.0;
  double hi = 0.0;
  for (double z : z_grid) {
    const double diff = F1.cdf_at(z) - F0.cdf_at_left(z - t);
    lo = std::max(lo, diff);
    hi = std::min(hi, diff);
  }
  return {std::max(lo, 0.0), 1.0 + std::min(hi, 0.0)};
}

/// Sharp bounds on Cov[Y(0),Y(1)]: antitone coupling attains the lower
/// bound, comonotone the upper.
inline std::pair<double, double> covariance_bounds(
    const Dist1D& F0, const Dist1D& F1,
    std::size_t n_quad = kDefaultQuadPoints) {
  const double mu = F0.mean() * F1.mean();
  const double hi = quantile_pair_integral(
      F0, F1, n_quad, [](double a, double b) { return a * b; });
  const double lo = quantile_pair_integral(
      F0, F1, n_quad, [](double a, double b) { return a * b; },
      /*reflect_first=*/true);
  return {lo - mu, hi - mu};
}

namespace detail {

/// Index of the atom carrying quantile level u: first i with cdf[i] >= u.
inline std::size_t atom_index_at_level(const Dist1D& d, double u) {
  const auto& cdf = d.cdf();
  auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) return cdf.size() - 1;
  return static_cast<std::size_t>(it - cdf.begin());
}

inline Coupling quantile_coupling(const Dist1D& P, const Dist1D& Q,
                                  bool reflect_first) {
  require_atomic(P, "quantile_coupling");
  require_atomic(Q, "quantile_coupling");
  std::vector<std::vector<double>> mass(P.size(),
                                        std::vector<double>(Q.size(), 0.0));
  const auto levels = merged_levels(P, Q, reflect_first);
  for (std::size_t k = 0; k + 1 < levels.size(); ++k) {
    const double du = levels[k + 1] - levels[k];
    if (du <= 0.0) continue;
    const double u = 0.5 * (levels[k] + levels[k + 1]);
    const std::size_t i = atom_index_at_level(P, reflect_first ? 1.0 - u : u);
    const std::size_t j = atom_index_at_level(Q, u);
    mass[i][j] += du;
  }
  return Coupling{P, Q, std::move(mass)};
}

}  // namespace detail

/// Comonotone coupling (F0^{-1}(U), F1^{-1}(U)) of two atomic laws.
inline Coupling comonotone_coupling(const Dist1D& P, const Dist1D& Q) {
  return detail::quantile_coupling(P, Q, /*reflect_first=*/false);
}

/// Antitone coupling (F0^{-1}(1-U), F1^{-1}(U)).
inline Coupling antitone_coupling(const Dist1D& P, const Dist1D& Q) {
  return detail::quantile_coupling(P, Q, /*reflect_first=*/true);
}

/// The antitone map T(y) = F1^{-1}(1 - F0(y)); maximizes the quadratic
/// effect over unconstrained couplings.
inline double antitone_map(const Dist1D& F0, const Dist1D& F1, double y) {
  return F1.quantile_at(std::clamp(1.0 - F0.cdf_at(y), 0.0, 1.0));
}

/// Wasserstein barycenter: the law whose quantile function is the
/// weighted average of the input quantile functions on u_grid.
inline Dist1D barycenter(std::span<const Dist1D> dists,
                         std::span<const double> weights,
                         std::span<const double> u_grid) {
  if (dists.empty()) throw std::invalid_argument("barycenter: empty input");
  if (dists.size() != weights.size())
    throw std::invalid_argument("barycenter: weight/law length mismatch");
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("barycenter: negative weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-6)
    throw std::invalid_argument("barycenter: weights must sum to 1");
  std::vector<double> us;
  us.reserve(u_grid.size() + 2);
  if (u_grid.empty() || u_grid.front() > 0.0) us.push_back(0.0);
  for (double u : u_grid) {
    if (u < 0.0 || u > 1.0)
      throw std::invalid_argument("barycenter: u grid outside [0,1]");
    us.push_back(u);
  }
  if (us.back() < 1.0) us.push_back(1.0);
  std::vector<double> qs(us.size(), 0.0);
  for (std::size_t k = 0; k < us.size(); ++k) {
    double q = 0.0;
    for (std::size_t i = 0; i < dists.size(); ++i)
      q += (weights[i] / wsum) * dists[i].quantile_at(us[k]);
    qs[k] = q;
  }
  return Dist1D::from_quantile_grid(us, qs);
}

inline Dist1D barycenter(std::span<const Dist1D> dists,
                         std::span<const double> weights) {
  const auto grid = midpoint_grid(kDefaultQuadPoints);
  return barycenter(dists, weights, grid);
}

/// Markov chain coupling: comonotone transitions between consecutive
/// marginals. Every one-dimensional marginal of the chain equals the
/// corresponding input (checked on composition in tests).
inline std::vector<Coupling> markov_chain_coupling(
    std::span<const Dist1D> dists) {
  if (dists.size() < 2)
    throw std::invalid_argument("markov_chain_coupling: need >= 2 marginals");
  std::vector<Coupling> chain;
  chain.reserve(dists.size() - 1);
  for (std::size_t i = 0; i + 1 < dists.size(); ++i)
    chain.push_back(comonotone_coupling(dists[i], dists[i + 1]));
  return chain;
}

/// The quadratic-effect maximizer over monotone couplings (Y(1) >= Y(0))
/// of a stochastically ordered pair F0 >= F1 (pointwise cdfs).
/// Mass at x stays put with probability min(p0,p1)(x)/p0(x) and otherwise
/// jumps to T(x) = inf{y >= x : F0(y)-F1(y) < F0(x)-F1(x)}.
struct MonotoneMaxLaw {
  double theta = 0.0;                // \int p0 ^ p1
  std::vector<double> grid;          // evaluation grid (union, refined)
  std::vector<double> jump;          // T(x) per grid point
  std::vector<double> stay;          // min(p0,p1)/p0 per grid point
  std::vector<double> excess0;       // (p0-p1)_+ per grid point
  std::vector<double> tie_points;    // x where the inf attains on a flat stretch
  Dist1D F0;
  Dist1D F1;

  double jump_map(double x) const {
    if (x <= grid.front()) return jump.front();
    if (x >= grid.back()) return jump.back();
    auto it = std::upper_bound(grid.begin(), grid.end(), x);
    const std::size_t j = static_cast<std::size_t>(it - grid.begin()) - 1;
    const double t = (x - grid[j]) / (grid[j + 1] - grid[j]);
    return jump[j] + t * (jump[j + 1] - jump[j]);
  }

  /// E[Y(1) | Y(0) = x] = theta x + (1-theta) T(x).
  double conditional_mean(double x) const {
    return theta * x + (1.0 - theta) * jump_map(x);
  }

  double stay_prob(double x) const {
    if (x <= grid.front()) return stay.front();
    if (x >= grid.back()) return stay.back();
    auto it = std::upper_bound(grid.begin(), grid.end(), x);
    const std::size_t j = static_cast<std::size_t>(it - grid.begin()) - 1;
    return stay[j];
  }

  /// Joint cdf F*(x,y): F1(y) for y <= x, else F0(x) - inf_{z in [x,y]}
  /// (F0(z) - F1(z)), with the inf taken over the evaluation grid.
  double f_star(double x, double y) const {
    if (y <= x) return F1.cdf_at(y);
    double inf_d = F0.cdf_at(x) - F1.cdf_at(x);
    auto lo = std::lower_bound(grid.begin(), grid.end(), x);
    for (auto it = lo; it != grid.end() && *it <= y; ++it)
      inf_d = std::min(inf_d, F0.cdf_at(*it) - F1.cdf_at(*it));
    inf_d = std::min(inf_d, F0.cdf_at(y) - F1.cdf_at(y));
    return std::max(0.0, F0.cdf_at(x) - inf_d);
  }

  /// E[(Y(1)-Y(0))^2] = \int (T(x)-x)^2 (p0-p1)_+(x) dx (the stay part
  /// contributes nothing).
  double quadratic_value() const {
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
      const double dx = grid[k + 1] - grid[k];
      const double d0 = jump[k] - grid[k];
      const double d1 = jump[k + 1] - grid[k + 1];
      acc += 0.5 * dx * (excess0[k] * d0 * d0 + excess0[k + 1] * d1 * d1);
    }
    return acc;
  }
};

namespace detail {

inline std::vector<double> union_grid_refined(const Dist1D& F0,
                                              const Dist1D& F1,
                                              std::size_t refine = 4) {
  std::vector<double> pts;
  pts.insert(pts.end(), F0.support().begin(), F0.support().end());
  pts.insert(pts.end(), F1.support().begin(), F1.support().end());
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (refine <= 1 || pts.size() < 2) return pts;
  std::vector<double> out;
  out.reserve(pts.size() * refine);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    for (std::size_t r = 0; r < refine; ++r)
      out.push_back(pts[i] + (pts[i + 1] - pts[i]) * static_cast<double>(r) /
                                 static_cast<double>(refine));
  }
  out.push_back(pts.back());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace detail

inline MonotoneMaxLaw monotone_max_law(const Dist1D& F0, const Dist1D& F1,
                                       double order_tol = 1e-9) {
  if (F0.mode() != DistMode::continuous || F1.mode() != DistMode::continuous)
    throw std::invalid_argument("monotone_max_law: continuous laws required");
  const auto grid = detail::union_grid_refined(F0, F1, 4);
  // stochastic ordering F0 >= F1 must hold everywhere
  std::vector<double> violations;
  for (double z : grid) {
    if (F0.cdf_at(z) < F1.cdf_at(z) - order_tol) violations.push_back(z);
  }
  if (!violations.empty()) {
    std::ostringstream msg;
    msg << "monotone_max_law: stochastic ordering violated at y in {";
    for (std::size_t i = 0; i < std::min<std::size_t>(violations.size(), 8); ++i)
      msg << (i ? ", " : "") << violations[i];
    if (violations.size() > 8) msg << ", ...";
    msg << "}";
    throw std::invalid_argument(msg.str());
  }

  MonotoneMaxLaw law{0.0, grid, {}, {}, {}, {}, F0, F1};
  const std::size_t n = grid.size();
  std::vector<double> d(n);
  for (std::size_t k = 0; k < n; ++k)
    d[k] = F0.cdf_at(grid[k]) - F1.cdf_at(grid[k]);

  // theta = \int p0 ^ p1 via midpoint evaluation on the refined grid
  double theta = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double mid = 0.5 * (grid[k] + grid[k + 1]);
    theta += (grid[k + 1] - grid[k]) *
             std::min(F0.density_at(mid), F1.density_at(mid));
  }
  law.theta = std::min(theta, 1.0);

  law.jump.resize(n);
  law.stay.resize(n);
  law.excess0.resize(n);
  const double tie_tol = 1e-12;
  for (std::size_t k = 0; k < n; ++k) {
    // T(x): first grid point y >= x with d(y) strictly below d(x)
    double t = grid.back();
    bool found = false;
    for (std::size_t j = k; j < n; ++j) {
      if (d[j] < d[k] - tie_tol) {
        t = grid[j];
        found = true;
        // flag flat stretches abutting the inf point (ambiguous "<")
        if (j > k + 1 && std::abs(d[j - 1] - d[k]) <= tie_tol &&
            std::abs(grid[j - 1] - grid[k]) > tie_tol)
          law.tie_points.push_back(grid[k]);
        break;
      }
    }
    if (!found) t = grid[k];  // d(x) = min tail value: mass stays
    law.jump[k] = std::max(t, grid[k]);
    const double p0 = F0.density_at(grid[k]);
    const double p1 = F1.density_at(grid[k]);
    law.stay[k] = (p0 > 0.0) ? std::min(1.0, std::min(p0, p1) / p0) : 1.0;
    law.excess0[k] = std::max(0.0, p0 - p1);
  }
  return law;
}

/// Closed-form monotone maximizer for atomic pairs on the same footing as
/// the LP oracle: the joint mass is obtained by double-differencing the
/// F* formula over the merged atom grid.
inline Coupling monotone_max_coupling_atomic(const Dist1D& P, const Dist1D& Q,
                                             double order_tol = 1e-9) {
  detail::require_atomic(P, "monotone_max_coupling_atomic");
  detail::require_atomic(Q, "monotone_max_coupling_atomic");
  std::vector<double> zs;
  zs.insert(zs.end(), P.support().begin(), P.support().end());
  zs.insert(zs.end(), Q.support().begin(), Q.support().end());
  std::sort(zs.begin(), zs.end());
  zs.erase(std::unique(zs.begin(), zs.end()), zs.end());
  for (double z : zs) {
    if (P.cdf_at(z) < Q.cdf_at(z) - order_tol)
      throw std::invalid_argument(
          "monotone_max_coupling_atomic: stochastic ordering violated");
  }
  const auto& xs = P.support();
  const auto& ys = Q.support();
  // F*(x,y) with the inf over [x,y] evaluated exactly for step cdfs:
  // d is constant between atoms, so min over merged atoms in [x,y] plus
  // the value at x itself.
  auto d_at = [&](double z) { return P.cdf_at(z) - Q.cdf_at(z); };
  auto f_star = [&](double x, double y) {
    if (y <= x) return Q.cdf_at(y);
    double inf_d = d_at(x);
    auto lo = std::upper_bound(zs.begin(), zs.end(), x);
    for (auto it = lo; it != zs.end() && *it <= y; ++it)
      inf_d = std::min(inf_d, d_at(*it));
    return std::max(0.0, P.cdf_at(x) - inf_d);
  };
  std::vector<std::vector<double>> mass(xs.size(),
                                        std::vector<double>(ys.size(), 0.0));
  auto f_at = [&](std::size_t i, std::size_t j) -> double {
    // treat index 0 as "one atom below the support" (cdf 0)
    if (i == 0 || j == 0) return 0.0;
    return f_star(xs[i - 1], ys[j - 1]);
  };
  for (std::size_t i = 1; i <= xs.size(); ++i) {
    for (std::size_t j = 1; j <= ys.size(); ++j) {
      double m = f_at(i, j) - f_at(i - 1, j) - f_at(i, j - 1) + f_at(i - 1, j - 1);
      if (m < 0.0 && m > -1e-10) m = 0.0;
      mass[i - 1][j - 1] = m;
    }
  }
  return Coupling{P, Q, std::move(mass)};
}

}  // namespace otcf
