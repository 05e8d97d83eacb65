#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "otcf/dataset.hpp"
#include "otcf/dist1d.hpp"
#include "otcf/nuisance.hpp"
#include "otcf/rng.hpp"
#include "otcf/transport.hpp"

namespace otcf {

inline constexpr double kDensityFloor = 1e-4;

/// One observation (x, a, y) as fed to influence functions.
struct Obs {
  std::span<const double> x;
  double a_obs = 0.0;
  double y_obs = 0.0;
};

inline Obs obs_at(const Dataset& data, std::size_t i) {
  return Obs{data.row_x(i), data.a[i], data.y[i]};
}

enum class Provenance { plugin, one_step, dr_learner };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::plugin: return "plugin";
    case Provenance::one_step: return "one_step";
    case Provenance::dr_learner: return "dr_learner";
  }
  return "?";
}

/// Estimated counterfactual marginals {F_a : a in a_grid} together with
/// the discretized treatment-weight measure.
struct CdfField {
  std::vector<double> a_grid;
  std::vector<Dist1D> laws;
  std::vector<double> pi_weights;
  Provenance provenance = Provenance::plugin;

  std::size_t size() const { return a_grid.size(); }

  void validate() const {
    if (a_grid.size() != laws.size() || a_grid.size() != pi_weights.size() ||
        a_grid.empty())
      throw std::invalid_argument("CdfField: shape mismatch");
    for (std::size_t i = 0; i + 1 < a_grid.size(); ++i)
      if (!(a_grid[i + 1] > a_grid[i]))
        throw std::invalid_argument("CdfField: a_grid not increasing");
    double s = 0.0;
    for (double w : pi_weights) {
      if (w < 0.0) throw std::invalid_argument("CdfField: negative weight");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-6)
      throw std::invalid_argument("CdfField: pi_weights must sum to 1");
  }

  /// Index of the grid point nearest to a; sets *clamped when a lies
  /// outside the grid range.
  std::size_t nearest_index(double a, bool* clamped = nullptr) const {
    if (clamped) *clamped = (a < a_grid.front() || a > a_grid.back());
    auto it = std::lower_bound(a_grid.begin(), a_grid.end(), a);
    if (it == a_grid.begin()) return 0;
    if (it == a_grid.end()) return a_grid.size() - 1;
    const std::size_t j = static_cast<std::size_t>(it - a_grid.begin());
    return (a - a_grid[j - 1] <= a_grid[j] - a) ? j - 1 : j;
  }

  /// Index of the grid point equal to a (discrete treatments).
  std::size_t exact_index(double a) const {
    const std::size_t j = nearest_index(a);
    const double scale = std::max(1.0, std::abs(a));
    if (std::abs(a_grid[j] - a) > 1e-9 * scale)
      throw std::invalid_argument("CdfField: treatment level " +
                                  std::to_string(a) + " not on the grid");
    return j;
  }

  /// Law at an off-grid a by linear interpolation of the bracketing cdfs
  /// on the union of their supports.
  Dist1D law_at(double a) const {
    bool clamped = false;
    const std::size_t j = nearest_index(a, &clamped);
    const double scale = std::max(1.0, std::abs(a));
    if (clamped || std::abs(a_grid[j] - a) <= 1e-12 * scale) return laws[j];
    const std::size_t lo = (a_grid[j] < a) ? j : j - 1;
    const std::size_t hi = lo + 1;
    const double t = (a - a_grid[lo]) / (a_grid[hi] - a_grid[lo]);
    std::vector<double> support;
    support.reserve(laws[lo].size() + laws[hi].size());
    support.insert(support.end(), laws[lo].support().begin(),
                   laws[lo].support().end());
    support.insert(support.end(), laws[hi].support().begin(),
                   laws[hi].support().end());
    std::sort(support.begin(), support.end());
    support.erase(std::unique(support.begin(), support.end()), support.end());
    std::vector<double> cdf(support.size());
    for (std::size_t g = 0; g < support.size(); ++g)
      cdf[g] = (1.0 - t) * laws[lo].cdf_at(support[g]) +
               t * laws[hi].cdf_at(support[g]);
    return Dist1D::from_cdf_grid(std::move(support), std::move(cdf));
  }

  /// Density of the law at grid index j, floored for denominator use.
  double density_floored(std::size_t j, double y) const {
    return std::max(laws[j].density_at(y), kDensityFloor);
  }

  /// Wasserstein barycenter of the field under its own weights.
  Dist1D barycenter_law(std::size_t u_points = kDefaultQuadPoints) const {
    return barycenter(laws, pi_weights, midpoint_grid(u_points));
  }
};

/// Shuffled two-fold split of {0..n-1}.
struct TwoFoldSplit {
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
};

inline TwoFoldSplit two_fold_split(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "two_fold_split"));
  rng.shuffle(idx);
  TwoFoldSplit split;
  split.first.assign(idx.begin(), idx.begin() + n / 2);
  split.second.assign(idx.begin() + n / 2, idx.end());
  std::sort(split.first.begin(), split.first.end());
  std::sort(split.second.begin(), split.second.end());
  return split;
}

// ---------------------------------------------------------------------------
// Plugin estimator
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> field_pi_weights(const Dataset& data,
                                            const NuisanceFit& nuis,
                                            std::span<const double> a_grid) {
  std::vector<double> w(a_grid.size(), 0.0);
  if (nuis.treatment_type() == TreatmentType::discrete) {
    for (std::size_t j = 0; j < a_grid.size(); ++j) {
      double cnt = 0.0;
      for (double ai : data.a) cnt += (ai == a_grid[j]) ? 1.0 : 0.0;
      w[j] = cnt / static_cast<double>(data.n());
    }
  } else {
    for (std::size_t j = 0; j < a_grid.size(); ++j)
      w[j] = nuis.marg_density(a_grid[j]);
  }
  double s = 0.0;
  for (double v : w) s += v;
  if (!(s > 0.0))
    throw std::invalid_argument("field_pi_weights: no treatment mass on grid");
  for (double& v : w) v /= s;
  return w;
}

}  // namespace detail

/// Plugin counterfactual cdf family F_a(y) = mean_i F(y | X_i, a),
/// monotonized per a; pi_weights from the treatment density on the grid.
inline CdfField plugin_cdf_field(const Dataset& data, const NuisanceFit& nuis,
                                 std::vector<double> a_grid,
                                 std::vector<double> y_grid) {
  if (a_grid.empty() || y_grid.empty())
    throw std::invalid_argument("plugin_cdf_field: empty grids");
  const std::size_t n = data.n();
  const std::size_t na = a_grid.size();
  const std::size_t ny = y_grid.size();
  std::vector<std::vector<double>> acc(na, std::vector<double>(ny, 0.0));
  if (nuis.cond_cdf_fn) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto xi = data.row_x(i);
      for (std::size_t j = 0; j < na; ++j)
        for (std::size_t g = 0; g < ny; ++g)
          acc[j][g] += nuis.cond_cdf_fn(y_grid[g], xi, a_grid[j]);
    }
  } else if (nuis.data().d == 0) {
    // no covariates: every query row shares the same conditional curve
    for (std::size_t j = 0; j < na; ++j) {
      const auto tw = nuis.treatment_weights(a_grid[j]);
      const auto curve = nuis.weighted_cdf_curve(tw, y_grid);
      for (std::size_t g = 0; g < ny; ++g)
        acc[j][g] = curve[g] * static_cast<double>(n);
    }
  } else {
    // hoist the covariate kernel: one pass per query row, reused per a
    std::vector<std::vector<double>> tw(na);
    for (std::size_t j = 0; j < na; ++j) tw[j] = nuis.treatment_weights(a_grid[j]);
    std::vector<double> w(nuis.data().n());
    for (std::size_t i = 0; i < n; ++i) {
      const auto xw = nuis.x_weights(data.row_x(i));
      for (std::size_t j = 0; j < na; ++j) {
        for (std::size_t r = 0; r < w.size(); ++r) w[r] = xw[r] * tw[j][r];
        const auto curve = nuis.weighted_cdf_curve(w, y_grid);
        for (std::size_t g = 0; g < ny; ++g) acc[j][g] += curve[g];
      }
    }
  }
  CdfField field;
  field.a_grid = std::move(a_grid);
  field.provenance = Provenance::plugin;
  for (std::size_t j = 0; j < na; ++j) {
    for (double& v : acc[j]) v /= static_cast<double>(n);
    field.laws.push_back(Dist1D::from_cdf_grid(y_grid, std::move(acc[j])));
  }
  field.pi_weights = detail::field_pi_weights(data, nuis, field.a_grid);
  field.validate();
  return field;
}

// ---------------------------------------------------------------------------
// Influence functions (discrete treatments)
// ---------------------------------------------------------------------------

/// Centered efficient influence function for F_a(y):
/// F(y|x,a) + 1{A=a} (1{Y<=y} - F(y|x,a)) / pi(a|x) - F_a(y).
inline double eif_cdf(const Obs& z, double a, double y, const NuisanceFit& nuis,
                      double f_a_y) {
  const double cond = nuis.cond_cdf(y, z.x, a);
  double phi = cond - f_a_y;
  if (z.a_obs == a) {
    const double pi = nuis.propensity(a, z.x);
    phi += ((z.y_obs <= y ? 1.0 : 0.0) - cond) / pi;
  }
  return phi;
}

/// One-step (AIPW) estimate of the counterfactual cdf at a discrete
/// treatment level: nuisances fit on one fold, the corrected mean taken
/// on the other, folds swapped and averaged.
inline Dist1D one_step_cdf_discrete(const Dataset& data,
                                    const TwoFoldSplit& split, double a,
                                    std::span<const double> y_grid,
                                    Bandwidths bw) {
  const std::size_t ny = y_grid.size();
  std::vector<double> curve(ny, 0.0);
  int folds = 0;
  for (int swap = 0; swap < 2; ++swap) {
    const auto& train_idx = swap ? split.second : split.first;
    const auto& eval_idx = swap ? split.first : split.second;
    std::size_t hits = 0;
    for (std::size_t i : eval_idx) hits += (data.a[i] == a) ? 1 : 0;
    if (hits < 5)
      throw std::invalid_argument(
          "one_step_cdf_discrete: fewer than 5 evaluation rows at a = " +
          std::to_string(a));
    const NuisanceFit nuis(data.subset(train_idx), bw, TreatmentType::discrete);
    std::vector<double> fold_curve(ny, 0.0);
    // without covariates the conditional curve is shared across rows
    const bool shared = (data.d == 0) && !nuis.cond_cdf_fn;
    std::vector<double> shared_cond;
    if (shared) shared_cond = nuis.cond_cdf_curve({}, a, y_grid);
    std::vector<double> cond_storage;
    for (std::size_t i : eval_idx) {
      if (!shared) cond_storage = nuis.cond_cdf_curve(data.row_x(i), a, y_grid);
      const auto& cond = shared ? shared_cond : cond_storage;
      if (data.a[i] == a) {
        const double pi = nuis.propensity(a, data.row_x(i));
        for (std::size_t g = 0; g < ny; ++g) {
          const double ind = (data.y[i] <= y_grid[g]) ? 1.0 : 0.0;
          fold_curve[g] += cond[g] + (ind - cond[g]) / pi;
        }
      } else {
        for (std::size_t g = 0; g < ny; ++g) fold_curve[g] += cond[g];
      }
    }
    for (std::size_t g = 0; g < ny; ++g)
      curve[g] += fold_curve[g] / static_cast<double>(eval_idx.size());
    ++folds;
  }
  for (double& v : curve) v /= static_cast<double>(folds);
  return Dist1D::from_cdf_grid(std::vector<double>(y_grid.begin(), y_grid.end()),
                               std::move(curve));
}

/// One-step field over every distinct (discrete) treatment level.
inline CdfField one_step_cdf_field(const Dataset& data,
                                   std::span<const double> y_grid,
                                   Bandwidths bw, std::uint64_t seed) {
  const auto split = two_fold_split(data.n(), seed);
  CdfField field;
  field.a_grid = data.distinct_treatments();
  field.provenance = Provenance::one_step;
  for (double a : field.a_grid)
    field.laws.push_back(one_step_cdf_discrete(data, split, a, y_grid, bw));
  for (double a : field.a_grid) {
    double cnt = 0.0;
    for (double ai : data.a) cnt += (ai == a) ? 1.0 : 0.0;
    field.pi_weights.push_back(cnt / static_cast<double>(data.n()));
  }
  field.validate();
  return field;
}

// ---------------------------------------------------------------------------
// DR-learner (continuous treatments)
// ---------------------------------------------------------------------------

struct DrLearnerDiagnostics {
  long widened_windows = 0;
};

/// DR-learner field: per y, local-linear regression on A of the
/// pseudo-outcome (1{Y<=y} - F_A(y|X)) pi(A)/pi(A|X) + plugin(A, y),
/// with nuisances cross-fit on swapped folds.
inline CdfField dr_learner_cdf(const Dataset& data,
                               std::vector<double> a_grid,
                               std::vector<double> y_grid, double smoother_bw,
                               Bandwidths bw, std::uint64_t seed,
                               DrLearnerDiagnostics* diag = nullptr) {
  if (a_grid.empty() || y_grid.empty())
    throw std::invalid_argument("dr_learner_cdf: empty grids");
  const std::size_t n = data.n();
  const std::size_t na = a_grid.size();
  const std::size_t ny = y_grid.size();
  const auto split = two_fold_split(n, seed);

  // pseudo[i][g], built out-of-fold
  std::vector<std::vector<double>> pseudo(n, std::vector<double>(ny, 0.0));
  for (int swap = 0; swap < 2; ++swap) {
    const auto& train_idx = swap ? split.second : split.first;
    const auto& eval_idx = swap ? split.first : split.second;
    const Dataset train = data.subset(train_idx);
    const NuisanceFit nuis(train, bw, TreatmentType::continuous);

    // plugin surface m(a, y) = mean_{j in eval} F(y | X_j, a) on the grid
    const Dataset eval_data = data.subset(eval_idx);
    const auto plug = plugin_cdf_field(eval_data, nuis,
                                       std::vector<double>(a_grid),
                                       std::vector<double>(y_grid));
    for (std::size_t i : eval_idx) {
      const auto xi = data.row_x(i);
      const double ai = data.a[i];
      const auto cond = nuis.cond_cdf_curve(xi, ai, y_grid);
      const double ratio = nuis.marg_density(ai) / nuis.propensity(ai, xi);
      const Dist1D plug_at_ai = plug.law_at(ai);
      for (std::size_t g = 0; g < ny; ++g) {
        const double ind = (data.y[i] <= y_grid[g]) ? 1.0 : 0.0;
        pseudo[i][g] = (ind - cond[g]) * ratio + plug_at_ai.cdf_at(y_grid[g]);
      }
    }
  }

  // local-linear regression of pseudo outcomes on A at each grid point
  CdfField field;
  field.provenance = Provenance::dr_learner;
  std::vector<std::vector<double>> fitted(na, std::vector<double>(ny, 0.0));
  for (std::size_t j = 0; j < na; ++j) {
    double bwj = smoother_bw;
    for (int attempt = 0;; ++attempt) {
      double s0 = 0.0, s1 = 0.0, s2 = 0.0;
      std::vector<double> w(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double da = data.a[i] - a_grid[j];
        w[i] = std::exp(-0.5 * da * da / (bwj * bwj));
        s0 += w[i];
        s1 += w[i] * da;
        s2 += w[i] * da * da;
      }
      if (!(s0 > kDenominatorFloor)) {
        if (attempt >= 4)
          throw numeric_error("dr_learner_cdf: degenerate smoother window");
        bwj *= 2.0;
        if (diag) ++diag->widened_windows;
        continue;
      }
      // local-linear fit; collapse to the local mean on a singular design
      const double det = s0 * s2 - s1 * s1;
      const bool linear = det > 1e-12 * (1.0 + s0 * s2);
      for (std::size_t g = 0; g < ny; ++g) {
        double t0 = 0.0, t1 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          t0 += w[i] * pseudo[i][g];
          t1 += w[i] * (data.a[i] - a_grid[j]) * pseudo[i][g];
        }
        fitted[j][g] = linear ? (s2 * t0 - s1 * t1) / det : t0 / s0;
      }
      break;
    }
  }
  for (std::size_t j = 0; j < na; ++j)
    field.laws.push_back(Dist1D::from_cdf_grid(y_grid, std::move(fitted[j])));
  field.a_grid = std::move(a_grid);
  const NuisanceFit full(data, bw, TreatmentType::continuous);
  field.pi_weights = detail::field_pi_weights(data, full, field.a_grid);
  field.validate();
  return field;
}

// ---------------------------------------------------------------------------
// Transport map and barycenter influence functions
// ---------------------------------------------------------------------------

/// EIF for the transport map T_{a,b}(y) = F_b^{-1}(F_a(y)):
/// (phi_{F_a(y)} - phi_{F_b(.)} at T) / p_b(T).
inline double eif_transport(const Obs& z, double a, double b, double y,
                            const NuisanceFit& nuis, const CdfField& field) {
  const std::size_t ia = field.exact_index(a);
  const std::size_t ib = field.exact_index(b);
  const Dist1D& Fa = field.laws[ia];
  const Dist1D& Fb = field.laws[ib];
  const double T = Fb.quantile_at(Fa.cdf_at(y));
  const double phi_a = eif_cdf(z, a, y, nuis, Fa.cdf_at(y));
  const double phi_b = eif_cdf(z, b, T, nuis, Fb.cdf_at(T));
  return (phi_a - phi_b) / field.density_floored(ib, T);
}

/// Plugin-plus-correction estimate of T_{a,b}(y) over the rows of data.
inline double one_step_transport(const Dataset& data, double a, double b,
                                 double y, const NuisanceFit& nuis,
                                 const CdfField& field) {
  const std::size_t ia = field.exact_index(a);
  const std::size_t ib = field.exact_index(b);
  const double plug = field.laws[ib].quantile_at(field.laws[ia].cdf_at(y));
  double corr = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i)
    corr += eif_transport(obs_at(data, i), a, b, y, nuis, field);
  return plug + corr / static_cast<double>(data.n());
}

/// EIF for the barycenter cdf G(y) (discrete treatments), in the printed
/// quotient form with u = G(y):
/// [ int phi_{F_a} (at F_a^{-1}(u)) / p_a(F_a^{-1}(u)) dPi(a)
///   + (G^{-1}(u) - F_A^{-1}(u)) ] / g(G^{-1}(u)).
inline double eif_barycenter_cdf(const Obs& z, double y,
                                 const NuisanceFit& nuis, const CdfField& field,
                                 const Dist1D& bary) {
  const double u = bary.cdf_at(y);
  const double g = std::max(bary.density_at(bary.quantile_at(u)), kDensityFloor);
  double integral = 0.0;
  for (std::size_t j = 0; j < field.size(); ++j) {
    if (field.pi_weights[j] <= 0.0) continue;
    const double qa = field.laws[j].quantile_at(u);
    const double phi = eif_cdf(z, field.a_grid[j], qa, nuis,
                               field.laws[j].cdf_at(qa));
    integral += field.pi_weights[j] * phi / field.density_floored(j, qa);
  }
  const std::size_t iA = field.exact_index(z.a_obs);
  const double drift = bary.quantile_at(u) - field.laws[iA].quantile_at(u);
  return (integral + drift) / g;
}

}  // namespace otcf
