#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "otcf/dist1d.hpp"
#include "otcf/rng.hpp"
#include "otcf/simlab.hpp"
#include "otcf/stats.hpp"
#include "otcf/transport.hpp"

using namespace otcf;

namespace {

Dist1D uniform_continuous(double lo, double hi, std::size_t n = 513) {
  auto grid = linspace(lo, hi, n);
  std::vector<double> cdf(n);
  for (std::size_t i = 0; i < n; ++i) cdf[i] = (grid[i] - lo) / (hi - lo);
  return Dist1D(std::move(grid), std::move(cdf), DistMode::continuous);
}

Dist1D gaussian(double mu, double sigma, std::size_t n = 2049,
                double span = 8.5) {
  auto grid = linspace(mu - span * sigma, mu + span * sigma, n);
  return discretize_cdf(
      [&](double y) { return normal_cdf((y - mu) / sigma); }, grid);
}

Dist1D random_atoms(Rng& rng, std::size_t n, bool equal_weights) {
  std::vector<double> v(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = rng.uniform(-4.0, 4.0);
    w[i] = equal_weights ? 1.0 : rng.uniform(0.2, 2.0);
  }
  return Dist1D::from_samples(v, w);
}

}  // namespace

TEST_CASE("ot_map_1d") {
  SECTION("identity for identical marginals") {
    const auto u = uniform_continuous(0.0, 1.0);
    REQUIRE(ot_map_1d(u, u, 0.3) == Catch::Approx(0.3).margin(1e-9));
  }
  SECTION("linear scaling between uniforms") {
    const auto p = uniform_continuous(0.0, 1.0);
    const auto q = uniform_continuous(0.0, 2.0);
    REQUIRE(ot_map_1d(p, q, 0.4) == Catch::Approx(0.8).margin(1e-9));
  }
  SECTION("matches the brute-force minimizer on 5-atom pairs") {
    Rng rng(11);
    for (int rep = 0; rep < 10; ++rep) {
      const auto p = random_atoms(rng, 5, true);
      const auto q = random_atoms(rng, 5, true);
      const auto [coupling, value] = brute_force_min_coupling(p, q);
      (void)value;
      // the optimal matching pairs sorted atoms; the map sends atom i of p
      // to the atom of q receiving its mass
      for (std::size_t i = 0; i < 5; ++i) {
        const double mapped = ot_map_1d(p, q, p.support()[i]);
        std::size_t j = 0;
        for (std::size_t c = 0; c < 5; ++c)
          if (coupling.mass[i][c] > 1e-12) j = c;
        REQUIRE(mapped == Catch::Approx(q.support()[j]).margin(1e-12));
      }
    }
  }
}

TEST_CASE("w2_distance") {
  const auto u = uniform_continuous(0.0, 1.0);
  REQUIRE(w2_distance(u, u) == Catch::Approx(0.0).margin(1e-12));
  const auto p0 = Dist1D::point_mass(0.0);
  const auto p3 = Dist1D::point_mass(3.0);
  REQUIRE(w2_distance(p0, p3) == Catch::Approx(3.0).margin(1e-12));
  const auto g0 = gaussian(0.0, 1.0);
  const auto g2 = gaussian(2.0, 1.0);
  REQUIRE(w2_distance(g0, g2, 4096) == Catch::Approx(2.0).margin(1e-2));
}

TEST_CASE("fh_cdf_bounds formulas") {
  // direct formula checks via laws whose cdfs hit the stated values
  const std::vector<double> v{0.0, 1.0};
  const auto d = Dist1D::from_samples(v);  // F(0)=0.5
  auto [l1, u1] = fh_cdf_bounds(d, d, 0.0, 0.0);
  REQUIRE(l1 == Catch::Approx(0.0));
  REQUIRE(u1 == Catch::Approx(0.5));

  const std::vector<double> v9{0., 0., 0., 0., 0., 0., 0., 0., 0., 1.};
  const std::vector<double> v8{0., 0., 0., 0., 0., 0., 0., 0., 1., 1.};
  const auto f0 = Dist1D::from_samples(v9);  // F0(0)=0.9
  const auto f1 = Dist1D::from_samples(v8);  // F1(0)=0.8
  auto [l2, u2] = fh_cdf_bounds(f0, f1, 0.0, 0.0);
  REQUIRE(l2 == Catch::Approx(0.7));
  REQUIRE(u2 == Catch::Approx(0.8));
}

TEST_CASE("fh difference-cdf bounds") {
  SECTION("identical continuous marginals at t=0") {
    const auto u = uniform_continuous(0.0, 1.0);
    const auto z = linspace(-1.0, 2.0, 301);
    auto [gl, gu] = fh_difference_cdf_bounds(u, u, 0.0, z);
    REQUIRE(gl >= 0.0);
    REQUIRE(gu == Catch::Approx(1.0));
  }
  SECTION("point masses: difference is the constant 1") {
    const auto f0 = Dist1D::point_mass(0.0);
    const auto f1 = Dist1D::point_mass(1.0);
    const auto z = linspace(-2.0, 3.0, 501);  // includes z = 1
    auto [gl_half, gu_half] = fh_difference_cdf_bounds(f0, f1, 0.5, z);
    REQUIRE(gl_half == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(gu_half == Catch::Approx(0.0).margin(1e-12));
    auto [gl_one, gu_one] = fh_difference_cdf_bounds(f0, f1, 1.0, z);
    REQUIRE(gl_one == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(gu_one == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("bounds envelop every coupling of a discrete 3-atom pair") {
    Rng rng(23);
    for (int rep = 0; rep < 5; ++rep) {
      const auto p = random_atoms(rng, 3, true);
      const auto q = random_atoms(rng, 3, true);
      std::vector<double> zs;
      for (double a : p.support())
        for (double b : q.support()) {
          zs.push_back(b);
          zs.push_back(a);
          zs.push_back(0.5 * (a + b));
        }
      std::sort(zs.begin(), zs.end());
      std::vector<std::size_t> perm{0, 1, 2};
      for (double t : {-1.0, 0.0, 0.7, 2.0}) {
        auto [gl, gu] = fh_difference_cdf_bounds(p, q, t, zs);
        REQUIRE(gl <= gu + 1e-12);
        do {
          double g = 0.0;
          for (std::size_t i = 0; i < 3; ++i)
            if (q.support()[perm[i]] - p.support()[i] <= t) g += 1.0 / 3.0;
          REQUIRE(g >= gl - 1e-9);
          REQUIRE(g <= gu + 1e-9);
        } while (std::next_permutation(perm.begin(), perm.end()));
        std::sort(perm.begin(), perm.end());
      }
    }
  }
}

TEST_CASE("covariance bounds") {
  SECTION("two equal two-atom laws") {
    const std::vector<double> v{0.0, 1.0};
    const auto d = Dist1D::from_samples(v);
    auto [lo, hi] = covariance_bounds(d, d);
    REQUIRE(lo == Catch::Approx(-0.25).margin(1e-12));
    REQUIRE(hi == Catch::Approx(0.25).margin(1e-12));
  }
  SECTION("point mass second marginal: covariance with a constant") {
    Rng rng(5);
    const auto p = random_atoms(rng, 4, false);
    const auto q = Dist1D::point_mass(2.0);
    auto [lo, hi] = covariance_bounds(p, q);
    REQUIRE(lo == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(hi == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("matches brute-force extremes over couplings") {
    Rng rng(31);
    for (int rep = 0; rep < 8; ++rep) {
      const auto p = random_atoms(rng, 5, rep % 2 == 0);
      const auto q = random_atoms(rng, 5, rep % 2 == 0);
      auto [lo, hi] = covariance_bounds(p, q);
      const double mu = p.mean() * q.mean();
      const auto como = comonotone_coupling(p, q);
      const auto anti = antitone_coupling(p, q);
      REQUIRE(hi == Catch::Approx(como.cross_moment() - mu).margin(1e-9));
      REQUIRE(lo == Catch::Approx(anti.cross_moment() - mu).margin(1e-9));
      // E[(Y1-Y0)^2] minimal <-> covariance maximal given fixed marginals
      const auto [cmin, vmin] = brute_force_min_coupling(p, q);
      (void)cmin;
      const double var_part = p.variance() + q.variance() +
                              (q.mean() - p.mean()) * (q.mean() - p.mean());
      REQUIRE(vmin == Catch::Approx(var_part - 2.0 * hi).margin(1e-9));
    }
  }
}

TEST_CASE("conservative_psi_lower_binary") {
  const auto u = uniform_continuous(0.0, 1.0);
  REQUIRE(conservative_psi_lower_binary(u, u) ==
          Catch::Approx(0.0).margin(1e-12));
  const auto p0 = Dist1D::point_mass(0.0);
  const auto p1 = Dist1D::point_mass(1.0);
  REQUIRE(conservative_psi_lower_binary(p0, p1) == Catch::Approx(1.0));

  SECTION("equals the exhaustive permutation minimum exactly") {
    Rng rng(41);
    for (int rep = 0; rep < 20; ++rep) {
      const std::size_t n = 2 + rng.uniform_index(5);  // up to 6 atoms
      const auto p = random_atoms(rng, n, true);
      const auto q = random_atoms(rng, n, true);
      const auto [c, best] = brute_force_min_coupling(p, q);
      (void)c;
      REQUIRE(conservative_psi_lower_binary(p, q) ==
              Catch::Approx(best).margin(1e-12));
    }
  }
}

TEST_CASE("comonotone coupling cost equals squared w2") {
  Rng rng(59);
  for (int rep = 0; rep < 10; ++rep) {
    const auto p = random_atoms(rng, 4 + rng.uniform_index(4), false);
    const auto q = random_atoms(rng, 4 + rng.uniform_index(4), false);
    const auto c = comonotone_coupling(p, q);
    REQUIRE(c.max_marginal_error() < 1e-12);
    const double w2 = w2_distance(p, q);
    REQUIRE(c.quadratic_cost() == Catch::Approx(w2 * w2).margin(1e-10));
  }
}

TEST_CASE("barycenter") {
  SECTION("single law is a fixed point up to the grid") {
    const auto g = gaussian(0.5, 1.3, 1025);
    const std::vector<Dist1D> laws{g};
    const std::vector<double> w{1.0};
    const auto b = barycenter(laws, w, midpoint_grid(2048));
    for (double u : {0.05, 0.3, 0.5, 0.8, 0.95})
      REQUIRE(b.quantile_at(u) == Catch::Approx(g.quantile_at(u)).margin(5e-3));
  }
  SECTION("two-Gaussian closed form") {
    const auto gm = gaussian(-1.0, 1.0, 4097);
    const auto gp = gaussian(1.0, 1.0, 4097);
    const std::vector<Dist1D> laws{gm, gp};
    const std::vector<double> w{0.5, 0.5};
    const auto b = barycenter(laws, w, midpoint_grid(4096));
    for (double u = 0.01; u <= 0.99; u += 0.014) {
      REQUIRE(b.quantile_at(u) ==
              Catch::Approx(normal_quantile(u)).margin(1e-3));
    }
  }
  SECTION("two point masses average to a point mass") {
    const std::vector<Dist1D> laws{Dist1D::point_mass(0.0),
                                   Dist1D::point_mass(2.0)};
    const std::vector<double> w{0.5, 0.5};
    const auto b = barycenter(laws, w, midpoint_grid(64));
    REQUIRE(b.quantile_at(0.5) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(b.size() == 1);
  }
  SECTION("empty input is rejected") {
    const std::vector<Dist1D> laws;
    const std::vector<double> w;
    REQUIRE_THROWS_AS(barycenter(laws, w), std::invalid_argument);
  }
  SECTION("first-order optimality of the quantile average") {
    // perturbing the barycenter quantile on any u-cell never decreases
    // sum_i w_i W^2(P_i, B)
    Rng rng(77);
    const auto g1 = gaussian(-0.5, 0.8, 513);
    const auto g2 = gaussian(1.0, 1.4, 513);
    const std::vector<Dist1D> laws{g1, g2};
    const std::vector<double> w{0.3, 0.7};
    const std::size_t K = 64;
    const auto ugrid = midpoint_grid(K);
    std::vector<double> bq(K);
    for (std::size_t k = 0; k < K; ++k)
      bq[k] = w[0] * g1.quantile_at(ugrid[k]) + w[1] * g2.quantile_at(ugrid[k]);
    auto objective = [&](const std::vector<double>& q) {
      double acc = 0.0;
      for (std::size_t i = 0; i < laws.size(); ++i) {
        double s = 0.0;
        for (std::size_t kk = 0; kk < K; ++kk) {
          const double diff = q[kk] - laws[i].quantile_at(ugrid[kk]);
          s += diff * diff;
        }
        acc += w[i] * s / static_cast<double>(K);
      }
      return acc;
    };
    const double base = objective(bq);
    for (int trial = 0; trial < 20; ++trial) {
      auto q = bq;
      q[rng.uniform_index(K)] += (rng.bernoulli(0.5) ? 1.0 : -1.0) * 1e-4;
      REQUIRE(objective(q) >= base - 1e-12);
    }
  }
}

TEST_CASE("markov chain coupling") {
  SECTION("identical marginals give identity transitions") {
    const std::vector<double> v{0.0, 1.0, 2.0};
    const auto d = Dist1D::from_samples(v);
    const std::vector<Dist1D> laws{d, d, d};
    const auto chain = markov_chain_coupling(laws);
    REQUIRE(chain.size() == 2);
    for (const auto& c : chain) {
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          const double expect = (i == j) ? 1.0 / 3.0 : 0.0;
          REQUIRE(c.mass[i][j] == Catch::Approx(expect).margin(1e-12));
        }
    }
  }
  SECTION("chain marginals reproduce the inputs exactly") {
    Rng rng(91);
    std::vector<Dist1D> laws;
    for (int i = 0; i < 3; ++i) laws.push_back(random_atoms(rng, 2, false));
    const auto chain = markov_chain_coupling(laws);
    // propagate the first marginal through the transition kernels
    std::vector<double> mu = laws[0].atom_weights();
    for (std::size_t step = 0; step < chain.size(); ++step) {
      const auto& c = chain[step];
      std::vector<double> next(c.col_marginal.size(), 0.0);
      const auto rw = c.row_marginal.atom_weights();
      for (std::size_t i = 0; i < rw.size(); ++i) {
        if (rw[i] <= 0.0) continue;
        for (std::size_t j = 0; j < next.size(); ++j)
          next[j] += mu[i] * (c.mass[i][j] / rw[i]);
      }
      const auto expect = laws[step + 1].atom_weights();
      for (std::size_t j = 0; j < next.size(); ++j)
        REQUIRE(next[j] == Catch::Approx(expect[j]).margin(1e-12));
      mu = next;
    }
  }
  SECTION("comonotone composition preserves quantile ranks") {
    // fine equal-weight discretizations of continuous laws: every chain
    // coupling is diagonal in the sorted order, so the path through rank
    // r stays at rank r across the whole index set
    const std::size_t n = 100;
    std::vector<Dist1D> laws;
    for (int s = 0; s < 4; ++s) {
      std::vector<double> atoms(n);
      for (std::size_t i = 0; i < n; ++i)
        atoms[i] = 0.5 * s + normal_quantile((static_cast<double>(i) + 0.5) /
                                             static_cast<double>(n)) *
                                 (1.0 + 0.2 * s);
      laws.push_back(Dist1D::from_samples(atoms));
    }
    const auto chain = markov_chain_coupling(laws);
    for (const auto& c : chain) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          if (i == j) {
            REQUIRE(c.mass[i][j] ==
                    Catch::Approx(1.0 / static_cast<double>(n)).margin(1e-12));
          } else {
            REQUIRE(c.mass[i][j] == Catch::Approx(0.0).margin(1e-15));
          }
        }
    }
  }
}

TEST_CASE("antitone map") {
  const auto u01 = uniform_continuous(0.0, 1.0);
  REQUIRE(antitone_map(u01, u01, 0.2) == Catch::Approx(0.8).margin(1e-9));
  const auto u02 = uniform_continuous(0.0, 2.0);
  REQUIRE(antitone_map(u01, u02, 0.0) == Catch::Approx(2.0).margin(1e-9));

  SECTION("induced coupling maximizes the quadratic cost") {
    Rng rng(113);
    for (int rep = 0; rep < 8; ++rep) {
      const auto p = random_atoms(rng, 5, true);
      const auto q = random_atoms(rng, 5, true);
      const auto anti = antitone_coupling(p, q);
      const auto [c, vmax] = brute_force_max_coupling(p, q, false);
      (void)c;
      REQUIRE(anti.quadratic_cost() == Catch::Approx(vmax).margin(1e-9));
    }
  }
}

TEST_CASE("monotone max law (continuous closed form)") {
  SECTION("identical marginals: theta 1, identity map") {
    const auto u = uniform_continuous(0.0, 1.0, 257);
    const auto law = monotone_max_law(u, u);
    REQUIRE(law.theta == Catch::Approx(1.0).margin(1e-9));
    for (double x : {0.1, 0.4, 0.9})
      REQUIRE(law.conditional_mean(x) == Catch::Approx(x).margin(2e-2));
    REQUIRE(law.quadratic_value() == Catch::Approx(0.0).margin(1e-9));
  }
  SECTION("shifted uniform pair closed form") {
    const auto f0 = uniform_continuous(0.0, 1.0, 2001);
    const auto f1 = uniform_continuous(0.5, 1.5, 2001);
    const auto law = monotone_max_law(f0, f1);
    REQUIRE(law.theta == Catch::Approx(0.5).margin(1e-2));
    const double step = 2.0 * 1.5 / 2000.0;
    REQUIRE(law.jump_map(0.2) == Catch::Approx(1.3).margin(4.0 * step + 1e-6));
    REQUIRE(law.jump_map(0.45) ==
            Catch::Approx(1.05).margin(4.0 * step + 1e-6));
    REQUIRE(law.jump_map(0.7) == Catch::Approx(1.0).margin(4.0 * step + 1e-6));
    // analytic value: int_0^{1/2} (1.5 - 2x)^2 dx = 13/24
    REQUIRE(law.quadratic_value() == Catch::Approx(13.0 / 24.0).margin(5e-3));
  }
  SECTION("F* evaluator has the right marginals") {
    const auto f0 = gaussian(0.0, 1.0, 401, 6.0);
    const auto f1 = gaussian(0.8, 1.0, 401, 6.0);
    const auto law = monotone_max_law(f0, f1);
    const double big = 1e9;
    for (double y : {-1.0, 0.0, 0.5, 1.5}) {
      REQUIRE(law.f_star(big, y) == Catch::Approx(f1.cdf_at(y)).margin(1e-6));
      REQUIRE(law.f_star(y, big) == Catch::Approx(f0.cdf_at(y)).margin(1e-6));
    }
  }
  SECTION("ordering violation is refused with diagnostics") {
    const auto f0 = uniform_continuous(0.0, 1.0, 65);
    const auto f1 = uniform_continuous(-0.5, 0.5, 65);
    REQUIRE_THROWS_AS(monotone_max_law(f0, f1), std::invalid_argument);
    try {
      monotone_max_law(f0, f1);
    } catch (const std::invalid_argument& e) {
      REQUIRE(std::string(e.what()).find("ordering violated") !=
              std::string::npos);
    }
  }
  SECTION("theta equals the overlap integral recomputed independently") {
    const auto f0 = gaussian(0.0, 1.0, 801, 6.0);
    const auto f1 = gaussian(1.2, 1.0, 801, 6.0);
    const auto law = monotone_max_law(f0, f1);
    // independent trapezoid on a 10x finer grid
    const auto grid = linspace(-7.0, 8.5, 8001);
    double theta = 0.0;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
      const double mid = 0.5 * (grid[i] + grid[i + 1]);
      theta += (grid[i + 1] - grid[i]) *
               std::min(f0.density_at(mid), f1.density_at(mid));
    }
    REQUIRE(law.theta == Catch::Approx(theta).margin(1e-3));
    REQUIRE(law.theta == Catch::Approx(2.0 * normal_cdf(-0.6)).margin(1e-2));
  }
}

TEST_CASE("monotone max atomic closed form matches the LP oracle") {
  Rng rng(131);
  for (int rep = 0; rep < 10; ++rep) {
    // random ordered pair: F1 is F0 shifted right by a positive amount
    const std::size_t n = 3 + rng.uniform_index(4);
    std::vector<double> v0(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      v0[i] = rng.uniform(-2.0, 2.0);
      w[i] = rng.uniform(0.2, 1.5);
    }
    const double shift = rng.uniform(0.1, 1.0);
    std::vector<double> v1(n);
    for (std::size_t i = 0; i < n; ++i) v1[i] = v0[i] + shift;
    const auto p = Dist1D::from_samples(v0, w);
    const auto q = Dist1D::from_samples(v1, w);
    const auto closed = monotone_max_coupling_atomic(p, q);
    REQUIRE(closed.max_marginal_error() < 1e-9);
    const auto [c, vmax] = brute_force_max_monotone(p, q);
    (void)c;
    REQUIRE(closed.quadratic_cost() == Catch::Approx(vmax).margin(1e-9));
  }
}
