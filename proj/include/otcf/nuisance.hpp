#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "otcf/dataset.hpp"
#include "otcf/dist1d.hpp"
#include "otcf/stats.hpp"

namespace otcf {

enum class TreatmentType { discrete, continuous };

inline constexpr double kPropensityFloor = 1e-3;
inline constexpr double kDenominatorFloor = 1e-12;

struct Bandwidths {
  double h = 1.0;   // covariate bandwidth (shared across dimensions)
  double nu = 1.0;  // treatment bandwidth
};

/// 1.06 sd n^{-1/5} per coordinate; the covariate bandwidth averages the
/// per-dimension values.
inline Bandwidths rule_of_thumb_bandwidths(const Dataset& data) {
  const double n = static_cast<double>(data.n());
  if (data.n() < 2)
    throw std::invalid_argument("rule_of_thumb_bandwidths: n >= 2 required");
  const double rate = std::pow(n, -0.2);
  Bandwidths bw;
  if (data.d > 0) {
    double acc = 0.0;
    std::vector<double> col(data.n());
    for (std::size_t k = 0; k < data.d; ++k) {
      for (std::size_t i = 0; i < data.n(); ++i) col[i] = data.x[i * data.d + k];
      acc += 1.06 * sample_sd(col) * rate;
    }
    bw.h = std::max(acc / static_cast<double>(data.d), 1e-6);
  }
  bw.nu = std::max(1.06 * sample_sd(data.a) * rate, 1e-6);
  return bw;
}

/// Nadaraya-Watson nuisance evaluators over a retained copy of the data:
/// conditional outcome cdf F(y|x,a), propensity density pi(a|x) and the
/// marginal treatment density. Product Gaussian kernels; discrete
/// treatments replace the treatment kernel with an exact-match indicator.
/// Oracle closures may override any evaluator (used by the influence-
/// function tests). Immutable after construction and safe to share.
class NuisanceFit {
 public:
  NuisanceFit(Dataset data, Bandwidths bw, TreatmentType treatment)
      : data_(std::move(data)),
        bw_(bw),
        treatment_(treatment),
        fallback_count_(std::make_shared<std::atomic<long>>(0)),
        clip_count_(std::make_shared<std::atomic<long>>(0)) {
    if (data_.n() < 2)
      throw std::invalid_argument("NuisanceFit: n >= 2 required");
    if (!(bw_.h > 0.0) || !(bw_.nu > 0.0))
      throw std::invalid_argument("NuisanceFit: bandwidths must be positive");
    y_order_.resize(data_.n());
    for (std::size_t i = 0; i < y_order_.size(); ++i) y_order_[i] = i;
    std::sort(y_order_.begin(), y_order_.end(), [&](std::size_t a, std::size_t b) {
      return data_.y[a] < data_.y[b];
    });
    y_sorted_.resize(data_.n());
    for (std::size_t i = 0; i < y_order_.size(); ++i)
      y_sorted_[i] = data_.y[y_order_[i]];
  }

  const Dataset& data() const { return data_; }
  const Bandwidths& bandwidths() const { return bw_; }
  TreatmentType treatment_type() const { return treatment_; }
  long fallback_count() const { return fallback_count_->load(); }
  long clip_count() const { return clip_count_->load(); }

  // oracle overrides (empty by default)
  std::function<double(double, std::span<const double>, double)> cond_cdf_fn;
  std::function<double(double, std::span<const double>)> propensity_fn;
  std::function<double(double)> marg_density_fn;

  /// Gaussian covariate kernel weights exp(-|x - X_i|^2 / (2 h^2)).
  std::vector<double> x_weights(std::span<const double> x) const {
    std::vector<double> w(data_.n(), 1.0);
    if (data_.d == 0) return w;
    if (x.size() != data_.d)
      throw std::invalid_argument("x_weights: covariate width mismatch");
    const double inv2h2 = 0.5 / (bw_.h * bw_.h);
    for (std::size_t i = 0; i < data_.n(); ++i) {
      double q = 0.0;
      const double* xi = data_.x.data() + i * data_.d;
      for (std::size_t k = 0; k < data_.d; ++k) {
        const double dxk = x[k] - xi[k];
        q += dxk * dxk;
      }
      w[i] = std::exp(-q * inv2h2);
    }
    return w;
  }

  /// Treatment kernel weights (indicator match in discrete mode).
  std::vector<double> treatment_weights(double a) const {
    std::vector<double> w(data_.n());
    if (treatment_ == TreatmentType::discrete) {
      for (std::size_t i = 0; i < data_.n(); ++i)
        w[i] = (data_.a[i] == a) ? 1.0 : 0.0;
    } else {
      const double inv2n2 = 0.5 / (bw_.nu * bw_.nu);
      for (std::size_t i = 0; i < data_.n(); ++i) {
        const double da = a - data_.a[i];
        w[i] = std::exp(-da * da * inv2n2);
      }
    }
    return w;
  }

  /// Weighted empirical cdf of Y over y_grid (grid must be sorted).
  /// Returns the global empirical cdf and counts a fallback when the
  /// total weight vanishes.
  std::vector<double> weighted_cdf_curve(std::span<const double> weights,
                                         std::span<const double> y_grid) const {
    std::vector<double> curve(y_grid.size(), 0.0);
    double total = 0.0;
    for (double w : weights) total += w;
    const bool degenerate = !(total > kDenominatorFloor);
    if (degenerate) ++(*fallback_count_);
    double cum = 0.0;
    std::size_t pos = 0;
    const double n = static_cast<double>(data_.n());
    for (std::size_t g = 0; g < y_grid.size(); ++g) {
      while (pos < y_sorted_.size() && y_sorted_[pos] <= y_grid[g]) {
        cum += degenerate ? 1.0 : weights[y_order_[pos]];
        ++pos;
      }
      curve[g] = degenerate ? cum / n : cum / total;
    }
    return curve;
  }

  /// F(y | x, a); kernel ratio with empirical-cdf fallback on an empty
  /// denominator.
  double cond_cdf(double y, std::span<const double> x, double a) const {
    if (cond_cdf_fn) return cond_cdf_fn(y, x, a);
    const auto xw = x_weights(x);
    const auto tw = treatment_weights(a);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < data_.n(); ++i) {
      const double w = xw[i] * tw[i];
      den += w;
      if (data_.y[i] <= y) num += w;
    }
    if (!(den > kDenominatorFloor)) {
      ++(*fallback_count_);
      double cnt = 0.0;
      for (double yi : data_.y) cnt += (yi <= y) ? 1.0 : 0.0;
      return cnt / static_cast<double>(data_.n());
    }
    return std::clamp(num / den, 0.0, 1.0);
  }

  /// Batched F(. | x, a) over a sorted grid; one kernel pass.
  std::vector<double> cond_cdf_curve(std::span<const double> x, double a,
                                     std::span<const double> y_grid) const {
    if (cond_cdf_fn) {
      std::vector<double> out(y_grid.size());
      for (std::size_t g = 0; g < y_grid.size(); ++g)
        out[g] = cond_cdf_fn(y_grid[g], x, a);
      return out;
    }
    const auto xw = x_weights(x);
    const auto tw = treatment_weights(a);
    std::vector<double> w(data_.n());
    for (std::size_t i = 0; i < data_.n(); ++i) w[i] = xw[i] * tw[i];
    return weighted_cdf_curve(w, y_grid);
  }

  /// pi(a | x), clipped below at the overlap floor. Density units for
  /// continuous treatments, a conditional pmf for discrete ones.
  double propensity(double a, std::span<const double> x) const {
    double val;
    if (propensity_fn) {
      val = propensity_fn(a, x);
    } else {
      const auto xw = x_weights(x);
      const auto tw = treatment_weights(a);
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < data_.n(); ++i) {
        num += xw[i] * tw[i];
        den += xw[i];
      }
      if (!(den > kDenominatorFloor)) {
        ++(*fallback_count_);
        return std::max(marg_density(a), kPropensityFloor);
      }
      val = num / den;
      if (treatment_ == TreatmentType::continuous)
        val /= bw_.nu * std::sqrt(2.0 * std::numbers::pi);
    }
    if (val < kPropensityFloor) {
      ++(*clip_count_);
      val = kPropensityFloor;
    }
    return val;
  }

  /// Marginal treatment density (pmf in discrete mode).
  double marg_density(double a) const {
    if (marg_density_fn) return marg_density_fn(a);
    const auto tw = treatment_weights(a);
    double s = 0.0;
    for (double w : tw) s += w;
    s /= static_cast<double>(data_.n());
    if (treatment_ == TreatmentType::continuous)
      s /= bw_.nu * std::sqrt(2.0 * std::numbers::pi);
    return s;
  }

 private:
  Dataset data_;
  Bandwidths bw_;
  TreatmentType treatment_;
  std::vector<std::size_t> y_order_;
  std::vector<double> y_sorted_;
  std::shared_ptr<std::atomic<long>> fallback_count_;
  std::shared_ptr<std::atomic<long>> clip_count_;
};

inline TreatmentType detect_treatment_type(const Dataset& data,
                                           std::size_t max_levels = 10) {
  return data.treatment_is_discrete(max_levels) ? TreatmentType::discrete
                                                : TreatmentType::continuous;
}

/// Fit the Nadaraya-Watson conditional-cdf evaluator (and with it the
/// kernel propensity machinery sharing the same data and bandwidths).
inline NuisanceFit fit_kernel_cond_cdf(const Dataset& data, double h, double nu) {
  return NuisanceFit(data, Bandwidths{h, nu}, detect_treatment_type(data));
}

inline NuisanceFit fit_kernel_cond_cdf(const Dataset& data, double h, double nu,
                                       TreatmentType treatment) {
  return NuisanceFit(data, Bandwidths{h, nu}, treatment);
}

/// Kernel density-ratio propensity and marginal treatment density; the
/// evaluators live on the same lazy NW machinery as the conditional cdf.
inline NuisanceFit fit_propensity(const Dataset& data, Bandwidths bw) {
  return NuisanceFit(data, bw, detect_treatment_type(data));
}

}  // namespace otcf
