#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "otcf/conservative.hpp"
#include "otcf/counterfactual.hpp"
#include "otcf/effects.hpp"
#include "otcf/nuisance.hpp"
#include "otcf/rng.hpp"
#include "otcf/stats.hpp"

namespace otcf {

/// Full-pipeline configuration for curve inference: nuisance bandwidths
/// and the grids the plugin field lives on.
struct PipelineConfig {
  Bandwidths bw{1.0, 1.0};
  std::size_t a_points = 40;
  std::size_t y_points = kDefaultGridSize;
};

struct Pipeline {
  NuisanceFit nuisance;
  CdfField field;
};

inline Pipeline fit_plugin_pipeline(const Dataset& data,
                                    const PipelineConfig& cfg,
                                    std::vector<double> a_grid = {},
                                    std::vector<double> y_grid = {}) {
  const TreatmentType treatment = detect_treatment_type(data);
  NuisanceFit nuis(data, cfg.bw, treatment);
  if (a_grid.empty()) a_grid = default_a_grid(data, treatment, cfg.a_points);
  if (y_grid.empty()) y_grid = default_y_grid(data, cfg.y_points);
  auto field = plugin_cdf_field(data, nuis, std::move(a_grid), std::move(y_grid));
  return Pipeline{std::move(nuis), std::move(field)};
}

// ---------------------------------------------------------------------------
// Sup-norm bootstrap band for the conservative curve
// ---------------------------------------------------------------------------

struct Band {
  std::vector<double> a_grid;
  std::vector<double> center;
  double half_width = 0.0;
  double alpha = 0.05;
  std::size_t n_boot_requested = 0;
  std::size_t n_boot_effective = 0;
  std::size_t dropped = 0;
  std::uint64_t seed = 0;
  std::vector<double> sup_deviations;  // one per surviving replicate
};

/// Nonparametric pairs bootstrap of the full pipeline (nuisance -> field
/// -> curve); the half width is the empirical (1-alpha) quantile of the
/// sup-norm deviation from the full-data curve.
inline Band bootstrap_band(const Dataset& data, const PipelineConfig& cfg,
                           double anchor_a, double anchor_y,
                           std::size_t n_boot, double alpha,
                           std::uint64_t seed) {
  if (n_boot < 100)
    throw std::invalid_argument("bootstrap_band: n_boot >= 100 required");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("bootstrap_band: alpha must lie in (0,1)");
  const auto base = fit_plugin_pipeline(data, cfg);
  const auto center = conservative_curve(base.field, anchor_a, anchor_y);

  Band band;
  band.a_grid = center.a_grid;
  band.center = center.values;
  band.alpha = alpha;
  band.n_boot_requested = n_boot;
  band.seed = seed;

  const std::size_t n = data.n();
  std::vector<std::size_t> idx(n);
  for (std::size_t b = 0; b < n_boot; ++b) {
    Rng rep_rng(derive_seed(seed, "bootstrap_band", b));
    for (std::size_t i = 0; i < n; ++i) idx[i] = rep_rng.uniform_index(n);
    try {
      const Dataset resample = data.subset(idx);
      const auto boot =
          fit_plugin_pipeline(resample, cfg, center.a_grid,
                              std::vector<double>(base.field.laws[0].support()));
      const auto curve = conservative_curve(boot.field, anchor_a, anchor_y);
      double sup = 0.0;
      for (std::size_t j = 0; j < curve.values.size(); ++j)
        sup = std::max(sup, std::abs(curve.values[j] - center.values[j]));
      band.sup_deviations.push_back(sup);
    } catch (const std::exception&) {
      ++band.dropped;
    }
  }
  if (band.dropped * 20 > n_boot)
    throw numeric_error("bootstrap_band: more than 5% of replicates failed");
  band.n_boot_effective = band.sup_deviations.size();
  band.half_width = empirical_quantile(band.sup_deviations, 1.0 - alpha);
  return band;
}

// ---------------------------------------------------------------------------
// HulC interval for scalar effects
// ---------------------------------------------------------------------------

struct HulcInterval {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t B = 0;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  std::vector<double> group_estimates;
};

/// Number of groups: ceil(log2(2/alpha)). (The printed form
/// ceil(log(alpha/2)/log 2) is negative for alpha < 2; the construction
/// needs its sign flipped.)
inline std::size_t hulc_group_count(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("hulc_group_count: alpha must lie in (0,1)");
  const double b = std::log2(2.0 / alpha);
  return static_cast<std::size_t>(std::max(2.0, std::ceil(b - 1e-12)));
}

/// Convex-hull interval: one random partition into B groups, the chosen
/// effect estimator per group, interval = [min_j psi_j, max_j psi_j].
inline HulcInterval hulc_interval(const Dataset& data, const EffectConfig& cfg,
                                  double alpha, std::uint64_t seed) {
  HulcInterval out;
  out.B = hulc_group_count(alpha);
  out.alpha = alpha;
  out.seed = seed;
  const std::size_t n = data.n();
  const std::size_t min_group =
      (cfg.method == EstimatorMethod::one_step) ? 40 : 20;
  if (n < 20 * out.B || n < min_group * out.B)
    throw std::invalid_argument(
        "hulc_interval: need n >= " +
        std::to_string(std::max<std::size_t>(20, min_group) * out.B) +
        " rows for B = " + std::to_string(out.B) + " groups");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "hulc_shuffle"));
  rng.shuffle(idx);
  for (std::size_t g = 0; g < out.B; ++g) {
    const std::size_t lo = g * n / out.B;
    const std::size_t hi = (g + 1) * n / out.B;
    std::vector<std::size_t> group(idx.begin() + lo, idx.begin() + hi);
    std::sort(group.begin(), group.end());
    const Dataset part = data.subset(group);
    const auto est =
        estimate_effect(part, cfg, derive_seed(seed, "hulc_group", g));
    out.group_estimates.push_back(est.value);
  }
  out.lo = *std::min_element(out.group_estimates.begin(),
                             out.group_estimates.end());
  out.hi = *std::max_element(out.group_estimates.begin(),
                             out.group_estimates.end());
  return out;
}

}  // namespace otcf
