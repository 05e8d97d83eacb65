#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "otcf/counterfactual.hpp"
#include "otcf/dataset.hpp"
#include "otcf/effects.hpp"
#include "otcf/inference.hpp"
#include "otcf/nuisance.hpp"
#include "otcf/rng.hpp"
#include "otcf/simlab.hpp"
#include "otcf/stats.hpp"
#include "otcf/transport.hpp"

using namespace otcf;

namespace {

/// Two-level randomized design A in {0,1}, Y | A=a ~ N(mu_a, sigma_a^2),
/// no covariates; everything about it is available in closed form.
struct BinaryDesign {
  double pi1 = 0.5;
  double mu0 = 0.0, sigma0 = 1.0;
  double mu1 = 1.0, sigma1 = 1.5;

  Dataset gen(std::size_t n, std::uint64_t seed) const {
    Rng rng(derive_seed(seed, "binary_design"));
    Dataset data;
    data.d = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool treated = rng.bernoulli(pi1);
      const double mu = treated ? mu1 : mu0;
      const double sd = treated ? sigma1 : sigma0;
      data.push_row({}, treated ? 1.0 : 0.0, mu + sd * rng.normal());
    }
    return data;
  }

  double true_cdf(double a, double y) const {
    return (a == 0.0) ? normal_cdf((y - mu0) / sigma0)
                      : normal_cdf((y - mu1) / sigma1);
  }

  NuisanceFit oracle_nuisance(const Dataset& data) const {
    NuisanceFit nuis(data, Bandwidths{1.0, 1.0}, TreatmentType::discrete);
    nuis.cond_cdf_fn = [*this](double y, std::span<const double>, double a) {
      return true_cdf(a, y);
    };
    nuis.propensity_fn = [*this](double a, std::span<const double>) {
      return (a == 1.0) ? pi1 : 1.0 - pi1;
    };
    nuis.marg_density_fn = [*this](double a) {
      return (a == 1.0) ? pi1 : 1.0 - pi1;
    };
    return nuis;
  }

  CdfField oracle_field(std::size_t y_points = 2049) const {
    const double lo = std::min(mu0 - 9.0 * sigma0, mu1 - 9.0 * sigma1);
    const double hi = std::max(mu0 + 9.0 * sigma0, mu1 + 9.0 * sigma1);
    const auto grid = linspace(lo, hi, y_points);
    CdfField field;
    field.a_grid = {0.0, 1.0};
    field.laws.push_back(
        discretize_cdf([&](double y) { return true_cdf(0.0, y); }, grid));
    field.laws.push_back(
        discretize_cdf([&](double y) { return true_cdf(1.0, y); }, grid));
    field.pi_weights = {1.0 - pi1, pi1};
    field.provenance = Provenance::plugin;
    return field;
  }

  double true_psi() const {
    const double dmu = mu1 - mu0;
    const double dsd = sigma1 - sigma0;
    return 2.0 * pi1 * (1.0 - pi1) * (dmu * dmu + dsd * dsd);
  }
};

}  // namespace

TEST_CASE("plugin field under no confounding and no effect") {
  // Y independent of (X, A): the field collapses to the marginal ecdf
  Rng rng(3);
  Dataset data;
  data.d = 1;
  std::vector<double> ys;
  for (int i = 0; i < 800; ++i) {
    const double xs[1] = {rng.normal()};
    const double y = rng.normal();
    ys.push_back(y);
    data.push_row(xs, rng.uniform(0.0, 1.0), y);
  }
  const auto bw = rule_of_thumb_bandwidths(data);
  const NuisanceFit nuis(data, bw, TreatmentType::continuous);
  const auto field = plugin_cdf_field(data, nuis, linspace(0.2, 0.8, 7),
                                      default_y_grid(data, 257));
  const auto ecdf = Dist1D::from_samples(ys);
  for (const auto& law : field.laws) {
    for (double y : {-1.5, -0.5, 0.0, 0.5, 1.5})
      REQUIRE(law.cdf_at(y) == Catch::Approx(ecdf.cdf_at(y)).margin(0.05));
  }
}

TEST_CASE("plugin field in the location model converges") {
  // W2(F-hat_a, N(a,1)) shrinks from n=500 to n=4000
  double w2_small = 0.0, w2_large = 0.0;
  for (std::size_t n : {500, 4000}) {
    std::vector<double> errs;
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto sim = gen_location_gauss(n, 0.0, 2.0, seed);
      const auto pipe = fit_plugin_pipeline(
          sim.data, PipelineConfig{Bandwidths{1.0, 0.35}, 21, 513});
      const double a = 1.0;
      const auto law = pipe.field.law_at(a);
      const auto truth = discretize_cdf(
          [&](double y) { return normal_cdf(y - a); }, linspace(-8.0, 10.0, 4097));
      errs.push_back(w2_distance(law, truth, 2048));
    }
    if (n == 500)
      w2_small = median_of(errs);
    else
      w2_large = median_of(errs);
  }
  REQUIRE(w2_large < w2_small);
}

TEST_CASE("eif_cdf pointwise identities") {
  BinaryDesign design;
  const auto data = design.gen(200, 5);
  const auto nuis = design.oracle_nuisance(data);
  const auto field = design.oracle_field(513);
  SECTION("cdf saturation kills the influence") {
    for (std::size_t i = 0; i < 20; ++i) {
      const Obs z = obs_at(data, i);
      REQUIRE(eif_cdf(z, 1.0, 1e9, nuis, 1.0) ==
              Catch::Approx(0.0).margin(1e-12));
    }
  }
  SECTION("indicator off when the observed arm differs") {
    for (std::size_t i = 0; i < data.n(); ++i) {
      const Obs z = obs_at(data, i);
      const double other = (z.a_obs == 0.0) ? 1.0 : 0.0;
      const double f = design.true_cdf(other, 0.3);
      REQUIRE(eif_cdf(z, other, 0.3, nuis, f) ==
              Catch::Approx(0.0).margin(1e-12));
      REQUIRE(eif_cdf(z, other, 0.3, nuis, 0.0) ==
              Catch::Approx(f).margin(1e-12));
    }
  }
  SECTION("Monte-Carlo mean zero at the truth") {
    BinaryDesign d2;
    const auto big = d2.gen(20000, 7);
    const auto nuis2 = d2.oracle_nuisance(big);
    for (auto [a, y] : {std::pair{0.0, 0.0}, {1.0, 0.5}, {1.0, 2.0}}) {
      const double f = d2.true_cdf(a, y);
      std::vector<double> vals;
      vals.reserve(big.n());
      for (std::size_t i = 0; i < big.n(); ++i)
        vals.push_back(eif_cdf(obs_at(big, i), a, y, nuis2, f));
      const double m = mean_of(vals);
      const double se = sample_sd(vals) / std::sqrt(double(vals.size()));
      REQUIRE(std::abs(m) <= 3.0 * se);
    }
  }
}

TEST_CASE("one-step cdf at a discrete level") {
  BinaryDesign design;
  SECTION("refuses when the evaluation fold is too thin") {
    BinaryDesign rare;
    rare.pi1 = 0.02;
    const auto data = rare.gen(60, 11);
    const auto split = two_fold_split(data.n(), 1);
    REQUIRE_THROWS_AS(one_step_cdf_discrete(data, split, 1.0,
                                            linspace(-4.0, 6.0, 129),
                                            Bandwidths{1.0, 1.0}),
                      std::invalid_argument);
  }
  SECTION("oracle-free estimate is close to the truth and normal-ish") {
    // |F-hat_a(y) - F_a(y)| <= 2.5 / sqrt(n_a) at 5 reference points in
    // at least 90% of simulations
    const std::size_t n = 2000;
    const int sims = 120;
    const std::vector<double> ref_y{-0.5, 0.2, 1.0, 1.8, 3.0};
    const auto y_grid = linspace(-7.0, 9.0, 513);
    int pass = 0;
    for (int s = 0; s < sims; ++s) {
      const auto data = design.gen(n, 100 + s);
      const auto split = two_fold_split(n, 200 + s);
      const auto law = one_step_cdf_discrete(data, split, 1.0, y_grid,
                                             Bandwidths{1.0, 1.0});
      std::size_t n_a = 0;
      for (double ai : data.a) n_a += (ai == 1.0) ? 1 : 0;
      bool ok = true;
      for (double y : ref_y) {
        const double err = std::abs(law.cdf_at(y) - design.true_cdf(1.0, y));
        if (err > 2.5 / std::sqrt(static_cast<double>(n_a))) ok = false;
      }
      pass += ok ? 1 : 0;
    }
    REQUIRE(pass >= static_cast<int>(0.9 * sims));
  }
  SECTION("double robustness: wrong outcome model, right propensity") {
    BinaryDesign d;
    const auto data = d.gen(4000, 13);
    const auto split = two_fold_split(data.n(), 14);
    const auto y_grid = linspace(-7.0, 9.0, 513);
    // plugin under the corrupted outcome model is badly biased; the
    // one-step correction restores consistency
    const double y = 1.0;
    const double truth = d.true_cdf(1.0, y);
    const double wrong = normal_cdf((y - 2.5) / 0.7);
    // one-step with the corrupted conditional cdf: emulate by averaging
    // the corrected influence terms directly
    double onestep = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < data.n(); ++i) {
      const double cond = wrong;  // constant-in-x corrupted model
      double term = cond;
      if (data.a[i] == 1.0)
        term += ((data.y[i] <= y ? 1.0 : 0.0) - cond) / d.pi1;
      onestep += term;
      ++cnt;
    }
    onestep /= static_cast<double>(cnt);
    REQUIRE(std::abs(onestep - truth) < 0.05);
    REQUIRE(std::abs(wrong - truth) > 0.2);
    (void)split;
    (void)y_grid;
  }
}

TEST_CASE("one-step field and plugin agree at oracle rates") {
  BinaryDesign design;
  const auto y_grid = linspace(-7.0, 9.0, 513);
  std::vector<double> gaps;
  for (std::size_t n : {500, 2000, 8000}) {
    const auto data = design.gen(n, 23);
    const auto field =
        one_step_cdf_field(data, y_grid, Bandwidths{1.0, 1.0}, 99);
    REQUIRE(field.provenance == Provenance::one_step);
    const NuisanceFit nuis(data, Bandwidths{1.0, 1.0},
                           TreatmentType::discrete);
    const auto plug = plugin_cdf_field(data, nuis, {0.0, 1.0},
                                       std::vector<double>(y_grid));
    double gap = 0.0;
    for (double y : {-0.5, 0.5, 1.5})
      gap = std::max(gap, std::abs(field.laws[1].cdf_at(y) -
                                   plug.laws[1].cdf_at(y)));
    gaps.push_back(gap);
  }
  // the correction vanishes as n grows
  REQUIRE(gaps.back() < gaps.front() + 0.05);
  REQUIRE(gaps.back() < 0.05);
}

TEST_CASE("dr-learner") {
  SECTION("oracle nuisances, no confounding: recovers the marginal cdf") {
    Rng rng(31);
    Dataset data;
    data.d = 1;
    std::vector<double> ys;
    for (int i = 0; i < 1200; ++i) {
      const double xs[1] = {rng.normal()};
      const double y = rng.normal();
      ys.push_back(y);
      data.push_row(xs, rng.uniform(0.0, 1.0), y);
    }
    const auto field = dr_learner_cdf(data, linspace(0.2, 0.8, 7),
                                      default_y_grid(data, 257), 0.15,
                                      Bandwidths{0.8, 0.2}, 5);
    const auto ecdf = Dist1D::from_samples(ys);
    for (const auto& law : field.laws)
      for (double y : {-1.0, 0.0, 1.0})
        REQUIRE(law.cdf_at(y) == Catch::Approx(ecdf.cdf_at(y)).margin(0.06));
  }
  SECTION("conditional-bias identity at oracle nuisances") {
    // with the true F(y|x,a) and pi plugged in, both bracketed factors of
    // the pseudo-outcome bias vanish: E[pseudo | A=a] = F_a(y), checked
    // numerically in the location model
    const auto sim = gen_location_gauss(3000, 0.0, 2.0, 37);
    const auto& data = sim.data;
    const double y = 1.2;
    const double a = 1.0;
    // pseudo at oracle: (1{Y<=y} - Phi(y-A)) * pi(A)/pi(A|X) + mean_X
    // Phi(y - a); without covariates pi(A)/pi(A|X) = 1
    std::vector<double> pseudo;
    for (std::size_t i = 0; i < data.n(); ++i) {
      if (std::abs(data.a[i] - a) > 0.05) continue;
      const double ind = (data.y[i] <= y) ? 1.0 : 0.0;
      pseudo.push_back((ind - normal_cdf(y - data.a[i])) + normal_cdf(y - a));
    }
    REQUIRE(pseudo.size() > 30);
    const double m = mean_of(pseudo);
    const double se = sample_sd(pseudo) / std::sqrt(double(pseudo.size()));
    REQUIRE(std::abs(m - normal_cdf(y - a)) <= 3.0 * se + 1e-3);
  }
  SECTION("comparative error vs plugin on the hirano dgp (recorded)") {
    // comparative Monte-Carlo; recorded, not hard-failed
    int dr_wins = 0;
    const int sims = 6;
    for (int s = 0; s < sims; ++s) {
      const auto sim = gen_hirano(800, 500 + s);
      const auto a_grid = linspace(0.2, 2.0, 10);
      const auto y_grid = default_y_grid(sim.data, 257);
      const NuisanceFit nuis(sim.data, Bandwidths{1.0, 1.0},
                             TreatmentType::continuous);
      const auto plug = plugin_cdf_field(sim.data, nuis,
                                         std::vector<double>(a_grid),
                                         std::vector<double>(y_grid));
      const auto dr =
          dr_learner_cdf(sim.data, std::vector<double>(a_grid),
                         std::vector<double>(y_grid), 0.3,
                         Bandwidths{1.0, 1.0}, 600 + s);
      double err_plug = 0.0, err_dr = 0.0;
      for (std::size_t j = 0; j < a_grid.size(); ++j) {
        const double t = sim.truth(a_grid[j]);
        err_plug += std::abs(plug.laws[j].mean() - t);
        err_dr += std::abs(dr.laws[j].mean() - t);
      }
      if (err_dr <= err_plug) ++dr_wins;
    }
    WARN("dr-learner beat plugin in " << dr_wins << "/" << sims
                                      << " hirano runs");
    SUCCEED();
  }
}

TEST_CASE("transport influence function") {
  BinaryDesign design;
  const auto field = design.oracle_field(2049);
  SECTION("a = b gives the zero function") {
    const auto data = design.gen(50, 41);
    const auto nuis = design.oracle_nuisance(data);
    for (std::size_t i = 0; i < data.n(); ++i) {
      REQUIRE(eif_transport(obs_at(data, i), 1.0, 1.0, 0.4, nuis, field) ==
              Catch::Approx(0.0).margin(1e-9));
    }
  }
  SECTION("Monte-Carlo mean zero at the truth") {
    const auto data = design.gen(20000, 43);
    const auto nuis = design.oracle_nuisance(data);
    for (double y : {-0.3, 0.4, 1.1}) {
      std::vector<double> vals;
      vals.reserve(data.n());
      for (std::size_t i = 0; i < data.n(); ++i)
        vals.push_back(eif_transport(obs_at(data, i), 0.0, 1.0, y, nuis, field));
      const double m = mean_of(vals);
      const double se = sample_sd(vals) / std::sqrt(double(vals.size()));
      REQUIRE(std::abs(m) <= 3.0 * se);
    }
  }
  SECTION("location shift: map is a shift and the correction vanishes") {
    BinaryDesign shift;
    shift.mu1 = 0.7;
    shift.sigma1 = 1.0;  // F_1 = F_0 shifted by 0.7
    const auto sfield = shift.oracle_field(4097);
    const double y = 0.25;
    const double plug =
        sfield.laws[1].quantile_at(sfield.laws[0].cdf_at(y));
    REQUIRE(plug == Catch::Approx(y + 0.7).margin(2e-3));
    const auto data = shift.gen(20000, 47);
    const auto nuis = shift.oracle_nuisance(data);
    const double onestep = one_step_transport(data, 0.0, 1.0, y, nuis, sfield);
    REQUIRE(onestep == Catch::Approx(plug).margin(0.05));
  }
}

TEST_CASE("barycenter cdf influence function") {
  SECTION("single treatment level reduces to a scaled cdf influence") {
    BinaryDesign one;
    one.pi1 = 1.0;  // every unit treated
    auto data = one.gen(20000, 53);
    CdfField field;
    field.a_grid = {1.0};
    const auto grid = linspace(-9.0, 11.0, 2049);
    field.laws.push_back(discretize_cdf(
        [&](double y) { return one.true_cdf(1.0, y); }, grid));
    field.pi_weights = {1.0};
    const auto nuis = one.oracle_nuisance(data);
    const auto bary = field.barycenter_law(2048);
    for (double y : {0.0, 1.0, 2.2}) {
      std::vector<double> vals;
      for (std::size_t i = 0; i < data.n(); ++i)
        vals.push_back(eif_barycenter_cdf(obs_at(data, i), y, nuis, field, bary));
      const double m = mean_of(vals);
      const double se = sample_sd(vals) / std::sqrt(double(vals.size()));
      REQUIRE(std::abs(m) <= 3.0 * se);
    }
  }
  SECTION("mirror-symmetric levels cancel at the common median") {
    BinaryDesign mirror;
    mirror.mu0 = -1.0;
    mirror.mu1 = 1.0;
    mirror.sigma0 = mirror.sigma1 = 1.0;
    mirror.pi1 = 0.5;
    const auto field = mirror.oracle_field(4097);
    const auto bary = field.barycenter_law(2048);
    const auto data = mirror.gen(20000, 59);
    const auto nuis = mirror.oracle_nuisance(data);
    std::vector<double> vals;
    for (std::size_t i = 0; i < data.n(); ++i)
      vals.push_back(eif_barycenter_cdf(obs_at(data, i), 0.0, nuis, field, bary));
    const double m = mean_of(vals);
    const double se = sample_sd(vals) / std::sqrt(double(vals.size()));
    REQUIRE(std::abs(m) <= 3.0 * se);
  }
}

TEST_CASE("field validation and lookup") {
  BinaryDesign design;
  auto field = design.oracle_field(257);
  field.validate();
  REQUIRE(field.exact_index(1.0) == 1);
  REQUIRE_THROWS_AS(field.exact_index(0.5), std::invalid_argument);
  bool clamped = false;
  REQUIRE(field.nearest_index(2.7, &clamped) == 1);
  REQUIRE(clamped);
  const auto mid = field.law_at(0.5);
  for (double y : {-0.5, 0.5, 1.5}) {
    const double expect =
        0.5 * field.laws[0].cdf_at(y) + 0.5 * field.laws[1].cdf_at(y);
    REQUIRE(mid.cdf_at(y) == Catch::Approx(expect).margin(1e-9));
  }
}
