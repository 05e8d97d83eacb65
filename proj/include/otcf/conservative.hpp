#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "otcf/counterfactual.hpp"
#include "otcf/dist1d.hpp"
#include "otcf/transport.hpp"

namespace otcf {

/// The treatment-effect-minimizing counterfactual curve through one
/// observation: the quantile curve a -> F_a^{-1}(tau) at the observed
/// rank tau = F_A(Y).
struct ConservativeCurve {
  std::vector<double> a_grid;
  std::vector<double> values;
  double anchor_a = 0.0;
  double anchor_y = 0.0;
  double tau = 0.0;
  bool anchor_clamped = false;  // anchor treatment outside the grid range
};

inline ConservativeCurve conservative_curve(const CdfField& field,
                                            double a_obs, double y_obs) {
  ConservativeCurve curve;
  curve.a_grid = field.a_grid;
  curve.anchor_a = a_obs;
  curve.anchor_y = y_obs;
  const std::size_t j = field.nearest_index(a_obs, &curve.anchor_clamped);
  // with atomic laws this is the right-continuous rank of the atom
  curve.tau = field.laws[j].cdf_at(y_obs);
  curve.values.reserve(field.size());
  for (const auto& law : field.laws)
    curve.values.push_back(law.quantile_at(curve.tau));
  return curve;
}

/// Counterfactual cdf families fit within strata of a conditioning
/// variable V (discrete strata).
struct StratifiedField {
  std::vector<double> v_values;
  std::vector<CdfField> fields;

  const CdfField& at(double v, double tol = 1e-9) const {
    for (std::size_t i = 0; i < v_values.size(); ++i)
      if (std::abs(v_values[i] - v) <= tol) return fields[i];
    throw std::invalid_argument("StratifiedField: unknown stratum v = " +
                                std::to_string(v));
  }
};

/// Same quantile-through-the-point construction using the V = v field.
inline ConservativeCurve conditional_conservative_curve(
    const StratifiedField& strata, double v, double a_obs, double y_obs) {
  return conservative_curve(strata.at(v), a_obs, y_obs);
}

/// Binary imputation of the unobserved arm: the transport map from the
/// observed arm's law to the other arm's law, evaluated at the outcome.
inline double impute_binary(const Dist1D& F0, const Dist1D& F1, int a_obs,
                            double y_obs) {
  if (a_obs != 0 && a_obs != 1)
    throw std::invalid_argument("impute_binary: a_obs must be 0 or 1");
  return (a_obs == 0) ? ot_map_1d(F0, F1, y_obs) : ot_map_1d(F1, F0, y_obs);
}

}  // namespace otcf
