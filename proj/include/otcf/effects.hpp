#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "otcf/counterfactual.hpp"
#include "otcf/dist1d.hpp"
#include "otcf/nuisance.hpp"
#include "otcf/transport.hpp"

namespace otcf {

enum class EffectKind { quadratic, contrast, differential, infinitesimal };
enum class EstimatorMethod { plugin, one_step };

struct EffectDiagnostics {
  std::optional<double> eif_mean;
  std::vector<std::string> flags;
};

struct EffectEstimate {
  double value = 0.0;
  EffectKind kind = EffectKind::quadratic;
  EstimatorMethod method = EstimatorMethod::plugin;
  EffectDiagnostics diagnostics;
};

namespace detail {

/// Quantile matrix Q[j][q] = F_{a_j}^{-1}(u_q) over the midpoint grid.
inline std::vector<std::vector<double>> quantile_matrix(
    const CdfField& field, std::span<const double> u_grid) {
  std::vector<std::vector<double>> Q(field.size(),
                                     std::vector<double>(u_grid.size()));
  for (std::size_t j = 0; j < field.size(); ++j)
    for (std::size_t q = 0; q < u_grid.size(); ++q)
      Q[j][q] = field.laws[j].quantile_at(u_grid[q]);
  return Q;
}

inline double mean_sq_diff(std::span<const double> a,
                           std::span<const double> b) {
  double s = 0.0;
  for (std::size_t q = 0; q < a.size(); ++q)
    s += (a[q] - b[q]) * (a[q] - b[q]);
  return s / static_cast<double>(a.size());
}

}  // namespace detail

/// Quadratic effect under the conservative coupling:
/// psi = int int int (F_a^{-1}(u) - F_b^{-1}(u))^2 du dPi(a) dPi(b),
/// evaluated as the Pi-weighted double sum over the treatment grid.
inline EffectEstimate quadratic_effect_plugin(
    const CdfField& field, std::size_t n_quad = kDefaultQuadPoints) {
  if (field.size() < 2)
    throw std::invalid_argument("quadratic_effect_plugin: need >= 2 levels");
  const auto u = midpoint_grid(n_quad);
  const auto Q = detail::quantile_matrix(field, u);
  double psi = 0.0;
  for (std::size_t j = 0; j < field.size(); ++j)
    for (std::size_t k = j + 1; k < field.size(); ++k)
      psi += 2.0 * field.pi_weights[j] * field.pi_weights[k] *
             detail::mean_sq_diff(Q[j], Q[k]);
  EffectEstimate out;
  out.value = psi;
  out.kind = EffectKind::quadratic;
  out.method = EstimatorMethod::plugin;
  return out;
}

/// Contrast relative to a baseline a0:
/// int int (F_a^{-1}(u) - F_{a0}^{-1}(u))^2 du dPi(a).
inline EffectEstimate contrast_effect(const CdfField& field, double a0,
                                      std::size_t n_quad = kDefaultQuadPoints) {
  if (a0 < field.a_grid.front() || a0 > field.a_grid.back())
    throw std::invalid_argument("contrast_effect: a0 outside the grid range");
  const auto u = midpoint_grid(n_quad);
  const Dist1D base = field.law_at(a0);
  std::vector<double> qb(u.size());
  for (std::size_t q = 0; q < u.size(); ++q) qb[q] = base.quantile_at(u[q]);
  double psi = 0.0;
  for (std::size_t j = 0; j < field.size(); ++j) {
    std::vector<double> qa(u.size());
    for (std::size_t q = 0; q < u.size(); ++q)
      qa[q] = field.laws[j].quantile_at(u[q]);
    psi += field.pi_weights[j] * detail::mean_sq_diff(qa, qb);
  }
  EffectEstimate out;
  out.value = psi;
  out.kind = EffectKind::contrast;
  out.method = EstimatorMethod::plugin;
  return out;
}

/// Differential effect int int [v_a(F_a^{-1}(u))]^2 du dPi(a) with the
/// velocity from central quantile differences (one-sided at the grid
/// ends). fd_step <= 0 selects the local grid spacing.
inline EffectEstimate differential_effect_plugin(
    const CdfField& field, std::size_t n_quad = kDefaultQuadPoints,
    double fd_step = 0.0) {
  if (field.size() < 3)
    throw std::invalid_argument(
        "differential_effect_plugin: need >= 3 grid points");
  const auto u = midpoint_grid(n_quad);
  double psi = 0.0;
  for (std::size_t j = 0; j < field.size(); ++j) {
    double lo, hi;
    if (fd_step > 0.0) {
      lo = std::max(field.a_grid[j] - fd_step, field.a_grid.front());
      hi = std::min(field.a_grid[j] + fd_step, field.a_grid.back());
    } else {
      lo = (j == 0) ? field.a_grid[0] : field.a_grid[j - 1];
      hi = (j + 1 == field.size()) ? field.a_grid[j] : field.a_grid[j + 1];
    }
    const Dist1D flo = field.law_at(lo);
    const Dist1D fhi = field.law_at(hi);
    double acc = 0.0;
    for (double uq : u) {
      const double v = (fhi.quantile_at(uq) - flo.quantile_at(uq)) / (hi - lo);
      acc += v * v;
    }
    psi += field.pi_weights[j] * acc / static_cast<double>(u.size());
  }
  EffectEstimate out;
  out.value = psi;
  out.kind = EffectKind::differential;
  out.method = EstimatorMethod::plugin;
  return out;
}

/// Squared metric derivative D^2(a) = int (Fdot_a(F_a^{-1}(u)) /
/// p_a(F_a^{-1}(u)))^2 du with Fdot from central differences in a.
inline double infinitesimal_effect(const CdfField& field, double a,
                                   double fd_step,
                                   std::size_t n_quad = kDefaultQuadPoints,
                                   bool* density_floored = nullptr) {
  if (!(a > field.a_grid.front() && a < field.a_grid.back()))
    throw std::invalid_argument("infinitesimal_effect: a must be interior");
  const double lo = std::max(a - fd_step, field.a_grid.front());
  const double hi = std::min(a + fd_step, field.a_grid.back());
  if (!(hi > lo))
    throw std::invalid_argument("infinitesimal_effect: degenerate fd step");
  const Dist1D fa = field.law_at(a);
  const Dist1D flo = field.law_at(lo);
  const Dist1D fhi = field.law_at(hi);
  const auto u = midpoint_grid(n_quad);
  double acc = 0.0;
  bool floored = false;
  for (double uq : u) {
    const double y = fa.quantile_at(uq);
    const double fdot = (fhi.cdf_at(y) - flo.cdf_at(y)) / (hi - lo);
    double dens = fa.density_at(y);
    if (dens < kDensityFloor) {
      dens = kDensityFloor;
      floored = true;
    }
    acc += (fdot / dens) * (fdot / dens);
  }
  if (density_floored) *density_floored = floored;
  return acc / static_cast<double>(u.size());
}

/// Velocity field v_a(y): central difference of the transport map
/// T_{a, a+delta}(y) through a.
inline double velocity_field(const CdfField& field, double a, double y,
                             double fd_step) {
  if (!(a > field.a_grid.front() && a < field.a_grid.back()))
    throw std::invalid_argument("velocity_field: a must be interior");
  const double lo = std::max(a - fd_step, field.a_grid.front());
  const double hi = std::min(a + fd_step, field.a_grid.back());
  const Dist1D fa = field.law_at(a);
  const Dist1D flo = field.law_at(lo);
  const Dist1D fhi = field.law_at(hi);
  const double u = fa.cdf_at(y);
  return (fhi.quantile_at(u) - flo.quantile_at(u)) / (hi - lo);
}

// ---------------------------------------------------------------------------
// Quadratic-effect influence function and one-step estimator
// ---------------------------------------------------------------------------

/// Field-derived precomputations shared across influence evaluations.
struct QuadraticEifContext {
  std::vector<double> a_grid;
  std::vector<double> pi_weights;
  std::vector<double> u_grid;
  std::vector<std::vector<double>> Q;       // quantiles per level
  std::vector<std::vector<double>> F_at_Q;  // cdf at own quantiles
  std::vector<std::vector<double>> dens;    // floored density at quantiles
  std::vector<double> q_bar;                // Pi-average quantile
  double psi = 0.0;

  std::size_t level_index(double a) const {
    for (std::size_t j = 0; j < a_grid.size(); ++j) {
      if (std::abs(a_grid[j] - a) <= 1e-9 * std::max(1.0, std::abs(a)))
        return j;
    }
    throw std::invalid_argument("QuadraticEifContext: off-grid level " +
                                std::to_string(a));
  }
};

inline QuadraticEifContext make_quadratic_eif_context(
    const CdfField& field, std::size_t n_quad = kDefaultQuadPoints,
    std::span<const double> pi_override = {}) {
  QuadraticEifContext ctx;
  ctx.a_grid = field.a_grid;
  ctx.pi_weights = pi_override.empty()
                       ? field.pi_weights
                       : std::vector<double>(pi_override.begin(),
                                             pi_override.end());
  ctx.u_grid = midpoint_grid(n_quad);
  ctx.Q = detail::quantile_matrix(field, ctx.u_grid);
  const std::size_t na = field.size();
  const std::size_t nq = ctx.u_grid.size();
  ctx.F_at_Q.assign(na, std::vector<double>(nq));
  ctx.dens.assign(na, std::vector<double>(nq));
  for (std::size_t j = 0; j < na; ++j)
    for (std::size_t q = 0; q < nq; ++q) {
      ctx.F_at_Q[j][q] = field.laws[j].cdf_at(ctx.Q[j][q]);
      ctx.dens[j][q] = field.density_floored(j, ctx.Q[j][q]);
    }
  ctx.q_bar.assign(nq, 0.0);
  for (std::size_t j = 0; j < na; ++j)
    for (std::size_t q = 0; q < nq; ++q)
      ctx.q_bar[q] += ctx.pi_weights[j] * ctx.Q[j][q];
  ctx.psi = 0.0;
  for (std::size_t j = 0; j < na; ++j)
    for (std::size_t kk = 0; kk < na; ++kk)
      ctx.psi += ctx.pi_weights[j] * ctx.pi_weights[kk] *
                 detail::mean_sq_diff(ctx.Q[j], ctx.Q[kk]);
  return ctx;
}

/// Centered efficient influence function for the quadratic effect:
/// 2 int int (F_A^{-1} - F_a^{-1})^2 du dPi(a) - 2 L(z) - 2 psi, with
/// L(z) = int int int (F_a^{-1} - F_b^{-1})
///        (phi_a / p_a - phi_b / p_b) du dPi(a) dPi(b);
/// the antisymmetric double sum collapses onto the Pi-average quantile.
inline double eif_quadratic(const Obs& z, const QuadraticEifContext& ctx,
                            const NuisanceFit& nuis) {
  const std::size_t iA = ctx.level_index(z.a_obs);
  const std::size_t na = ctx.a_grid.size();
  const std::size_t nq = ctx.u_grid.size();
  double term1 = 0.0;
  for (std::size_t j = 0; j < na; ++j)
    term1 += ctx.pi_weights[j] * detail::mean_sq_diff(ctx.Q[iA], ctx.Q[j]);
  double L = 0.0;
  for (std::size_t j = 0; j < na; ++j) {
    if (ctx.pi_weights[j] <= 0.0) continue;
    const double pi_j = nuis.propensity(ctx.a_grid[j], z.x);
    const bool match = (z.a_obs == ctx.a_grid[j]);
    const auto cond = nuis.cond_cdf_curve(z.x, ctx.a_grid[j], ctx.Q[j]);
    double acc = 0.0;
    for (std::size_t q = 0; q < nq; ++q) {
      double phi = cond[q] - ctx.F_at_Q[j][q];
      if (match)
        phi += ((z.y_obs <= ctx.Q[j][q] ? 1.0 : 0.0) - cond[q]) / pi_j;
      acc += (ctx.Q[j][q] - ctx.q_bar[q]) * phi / ctx.dens[j][q];
    }
    L += 2.0 * ctx.pi_weights[j] * acc / static_cast<double>(nq);
  }
  return 2.0 * term1 - 2.0 * L - 2.0 * ctx.psi;
}

/// Cross-fitted one-step estimator of the quadratic effect for discrete
/// treatments: per fold, the U-statistic over evaluation pairs minus the
/// mean influence correction built from the training-fold field.
inline EffectEstimate quadratic_effect_onestep(
    const Dataset& data, const TwoFoldSplit& split, Bandwidths bw,
    std::vector<double> y_grid, std::size_t n_quad = kDefaultQuadPoints) {
  if (data.n() < 40)
    throw std::invalid_argument(
        "quadratic_effect_onestep: need n >= 40 for the split");
  EffectEstimate out;
  out.kind = EffectKind::quadratic;
  out.method = EstimatorMethod::one_step;
  double psi_acc = 0.0;
  double eif_acc = 0.0;
  for (int swap = 0; swap < 2; ++swap) {
    const auto& train_idx = swap ? split.second : split.first;
    const auto& eval_idx = swap ? split.first : split.second;
    const Dataset train = data.subset(train_idx);
    const NuisanceFit nuis(train, bw, TreatmentType::discrete);
    const auto levels = data.distinct_treatments();
    const auto field = plugin_cdf_field(train, nuis, levels,
                                        std::vector<double>(y_grid));
    // evaluation-fold empirical treatment weights
    std::vector<double> pi_hat(levels.size(), 0.0);
    std::vector<std::size_t> level_of(eval_idx.size());
    for (std::size_t r = 0; r < eval_idx.size(); ++r) {
      const double ai = data.a[eval_idx[r]];
      std::size_t li = levels.size();
      for (std::size_t j = 0; j < levels.size(); ++j)
        if (levels[j] == ai) li = j;
      if (li == levels.size())
        throw std::invalid_argument(
            "quadratic_effect_onestep: unseen treatment level in fold");
      level_of[r] = li;
      pi_hat[li] += 1.0;
    }
    const double n2 = static_cast<double>(eval_idx.size());
    for (double& w : pi_hat) w /= n2;
    auto ctx = make_quadratic_eif_context(field, n_quad, pi_hat);

    // U-statistic over evaluation pairs collapses onto level counts
    double ustat = 0.0;
    for (std::size_t j = 0; j < levels.size(); ++j)
      for (std::size_t kk = 0; kk < levels.size(); ++kk) {
        if (j == kk) continue;
        ustat += pi_hat[j] * pi_hat[kk] *
                 detail::mean_sq_diff(ctx.Q[j], ctx.Q[kk]);
      }
    ustat *= n2 / (n2 - 1.0);

    double mean_L = 0.0;
    double mean_term1 = 0.0;
    for (std::size_t r = 0; r < eval_idx.size(); ++r) {
      const Obs z = obs_at(data, eval_idx[r]);
      const std::size_t iA = level_of[r];
      double term1 = 0.0;
      for (std::size_t j = 0; j < levels.size(); ++j)
        term1 += pi_hat[j] * detail::mean_sq_diff(ctx.Q[iA], ctx.Q[j]);
      mean_term1 += term1;
      // L(z) reusing the context machinery
      const double phi = eif_quadratic(z, ctx, nuis);
      // phi = 2 term1 - 2 L - 2 psi  =>  L = term1 - psi - phi / 2
      mean_L += term1 - ctx.psi - 0.5 * phi;
    }
    mean_L /= n2;
    mean_term1 /= n2;
    const double psi_fold = ustat - 2.0 * mean_L;
    psi_acc += psi_fold;
    eif_acc += 2.0 * (mean_term1 - ustat) - 2.0 * mean_L;
  }
  out.value = 0.5 * psi_acc;
  out.diagnostics.eif_mean = 0.5 * eif_acc;
  return out;
}

// ---------------------------------------------------------------------------
// Effect-estimator dispatch (shared by HulC and the CLI)
// ---------------------------------------------------------------------------

struct EffectConfig {
  EffectKind kind = EffectKind::quadratic;
  EstimatorMethod method = EstimatorMethod::plugin;
  Bandwidths bw{1.0, 1.0};
  std::size_t a_points = 25;  // grid size for continuous treatments
  std::size_t y_points = 257;
  std::size_t n_quad = 512;
  double a0 = 0.0;            // contrast baseline
  double at = 0.0;            // infinitesimal probe point
  double fd_step = 0.0;       // 0 selects the grid spacing
};

inline std::vector<double> default_a_grid(const Dataset& data,
                                          TreatmentType treatment,
                                          std::size_t a_points) {
  if (treatment == TreatmentType::discrete) return data.distinct_treatments();
  const auto [lo, hi] = std::minmax_element(data.a.begin(), data.a.end());
  return linspace(*lo, *hi, std::max<std::size_t>(a_points, 3));
}

inline std::vector<double> default_y_grid(const Dataset& data,
                                          std::size_t y_points) {
  const auto [lo, hi] = std::minmax_element(data.y.begin(), data.y.end());
  return padded_grid(*lo, *hi, std::max<std::size_t>(y_points, 8));
}

/// Fit the field implied by the config and evaluate the requested effect.
/// One-step estimation requires discrete treatments (no efficient
/// influence function exists in the continuous case).
inline EffectEstimate estimate_effect(const Dataset& data,
                                      const EffectConfig& cfg,
                                      std::uint64_t seed) {
  const TreatmentType treatment = detect_treatment_type(data);
  if (cfg.method == EstimatorMethod::one_step &&
      treatment == TreatmentType::continuous)
    throw std::invalid_argument(
        "estimate_effect: one-step estimation needs a discrete treatment; "
        "no efficient influence function exists for continuous treatments");
  auto y_grid = default_y_grid(data, cfg.y_points);
  if (cfg.kind == EffectKind::quadratic &&
      cfg.method == EstimatorMethod::one_step) {
    const auto split = two_fold_split(data.n(), seed);
    return quadratic_effect_onestep(data, split, cfg.bw, std::move(y_grid),
                                    cfg.n_quad);
  }
  const NuisanceFit nuis(data, cfg.bw, treatment);
  const auto field = plugin_cdf_field(
      data, nuis, default_a_grid(data, treatment, cfg.a_points), y_grid);
  switch (cfg.kind) {
    case EffectKind::quadratic:
      return quadratic_effect_plugin(field, cfg.n_quad);
    case EffectKind::contrast:
      return contrast_effect(field, cfg.a0, cfg.n_quad);
    case EffectKind::differential:
      return differential_effect_plugin(field, cfg.n_quad, cfg.fd_step);
    case EffectKind::infinitesimal: {
      EffectEstimate out;
      out.kind = EffectKind::infinitesimal;
      out.method = EstimatorMethod::plugin;
      const double step = (cfg.fd_step > 0.0)
                              ? cfg.fd_step
                              : (field.a_grid.back() - field.a_grid.front()) /
                                    static_cast<double>(field.size() - 1);
      bool floored = false;
      out.value = infinitesimal_effect(field, cfg.at, step, cfg.n_quad,
                                       &floored);
      if (floored) out.diagnostics.flags.push_back("density_floored");
      return out;
    }
  }
  throw std::invalid_argument("estimate_effect: unknown effect kind");
}

}  // namespace otcf
