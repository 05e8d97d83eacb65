#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "otcf/common.hpp"
#include "otcf/dataset.hpp"
#include "otcf/dist1d.hpp"
#include "otcf/rng.hpp"
#include "otcf/transport.hpp"

namespace otcf {

// ---------------------------------------------------------------------------
// Data-generating processes with known truth
// ---------------------------------------------------------------------------

enum class DgpKind { hirano, two_lines, location_gauss };

struct DgpSpec {
  DgpKind kind = DgpKind::hirano;
  std::size_t n = 1000;
  std::uint64_t seed = 1;
  double a_lo = 0.0;  // treatment range for the uniform-treatment kinds
  double a_hi = 1.0;
  // "A ~ exp(X1+X2)" read as Exponential(rate = X1+X2); set false for the
  // mean parameterization (the marginal mean curve is identical).
  bool hirano_rate_param = true;
};

struct SimOutput {
  Dataset data;
  std::function<double(double)> truth;  // a -> E[Y(a)]
  std::string truth_label;
};

/// Y(a) = a + (X1+X2) e^{-a(X1+X2)} + eps with eps ~ N(0,1), X1,X2 unit
/// exponentials and A | X exponential with rate (or mean) X1+X2.
/// E[Y(a)] = a + 2/(1+a)^3.
inline SimOutput gen_hirano(std::size_t n, std::uint64_t seed,
                            bool rate_param = true) {
  if (n < 1) throw std::invalid_argument("gen_hirano: n >= 1 required");
  Rng rng(derive_seed(seed, "dgp.hirano"));
  Dataset data;
  data.d = 2;
  for (std::size_t i = 0; i < n; ++i) {
    const double x1 = rng.exponential(1.0);
    const double x2 = rng.exponential(1.0);
    const double s = x1 + x2;
    const double a = rate_param ? rng.exponential(s) : rng.exponential(1.0 / s);
    const double y = a + s * std::exp(-a * s) + rng.normal();
    const double xs[2] = {x1, x2};
    data.push_row(xs, a, y);
  }
  return SimOutput{std::move(data),
                   [](double a) { return a + 2.0 / std::pow(1.0 + a, 3); },
                   "a + 2/(1+a)^3"};
}

/// Two deterministic dose-response lines y = a-1 and y = 1-a, each with
/// probability 1/2; A uniform on [a_lo, a_hi]. E[Y(a)] = 0.
inline SimOutput gen_two_lines(std::size_t n, double a_lo, double a_hi,
                               std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("gen_two_lines: n >= 1 required");
  if (!(a_hi > a_lo)) throw std::invalid_argument("gen_two_lines: bad range");
  Rng rng(derive_seed(seed, "dgp.two_lines"));
  Dataset data;
  data.d = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool upper = rng.bernoulli(0.5);
    const double a = rng.uniform(a_lo, a_hi);
    const double y = upper ? a - 1.0 : 1.0 - a;
    data.push_row({}, a, y);
  }
  return SimOutput{std::move(data), [](double) { return 0.0; }, "0"};
}

/// Location model Y = A + eps, A ~ Unif[a_lo,a_hi] independent of
/// eps ~ N(0,1). E[Y(a)] = a and F_a = N(a,1).
inline SimOutput gen_location_gauss(std::size_t n, double a_lo, double a_hi,
                                    std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("gen_location_gauss: n >= 1 required");
  if (!(a_hi > a_lo))
    throw std::invalid_argument("gen_location_gauss: bad range");
  Rng rng(derive_seed(seed, "dgp.location_gauss"));
  Dataset data;
  data.d = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = rng.uniform(a_lo, a_hi);
    data.push_row({}, a, a + rng.normal());
  }
  return SimOutput{std::move(data), [](double a) { return a; }, "a"};
}

inline SimOutput generate(const DgpSpec& spec) {
  switch (spec.kind) {
    case DgpKind::hirano:
      return gen_hirano(spec.n, spec.seed, spec.hirano_rate_param);
    case DgpKind::two_lines:
      return gen_two_lines(spec.n, spec.a_lo, spec.a_hi, spec.seed);
    case DgpKind::location_gauss:
      return gen_location_gauss(spec.n, spec.a_lo, spec.a_hi, spec.seed);
  }
  throw std::invalid_argument("generate: unknown dgp kind");
}

// ---------------------------------------------------------------------------
// Exact transportation LP (the coupling oracle)
// ---------------------------------------------------------------------------

namespace lp {

/// Dense transportation problem: minimize sum c[i][j] x[i][j] subject to
/// row sums = supply and column sums = demand. Solved by the classic
/// transportation simplex (northwest-corner start, MODI pricing) with
/// lexicographic tie-breaking so runs are deterministic. Optimality is
/// certified by complementary slackness before returning.
struct TransportResult {
  std::vector<std::vector<double>> mass;
  double value = 0.0;
  double slackness_residual = 0.0;
  std::size_t pivots = 0;
};

inline TransportResult solve_transport(
    const std::vector<double>& supply, const std::vector<double>& demand,
    const std::vector<std::vector<double>>& cost,
    const std::vector<std::vector<char>>* forbidden = nullptr,
    double tol = 1e-11) {
  const std::size_t m = supply.size();
  const std::size_t k = demand.size();
  if (m == 0 || k == 0 || cost.size() != m)
    throw std::invalid_argument("solve_transport: bad shapes");
  double sup = 0.0, dem = 0.0;
  for (double s : supply) sup += s;
  for (double t : demand) dem += t;
  if (std::abs(sup - dem) > 1e-9)
    throw std::invalid_argument("solve_transport: unbalanced marginals");

  double cmax = 0.0;
  for (const auto& row : cost)
    for (double c : row) cmax = std::max(cmax, std::abs(c));
  const double big_m = 1e7 * (1.0 + cmax);
  auto cost_at = [&](std::size_t i, std::size_t j) {
    if (forbidden && (*forbidden)[i][j]) return big_m;
    return cost[i][j];
  };

  std::vector<std::vector<double>> x(m, std::vector<double>(k, 0.0));
  std::vector<std::vector<char>> in_basis(m, std::vector<char>(k, 0));

  // northwest-corner start over the given index order; each iteration
  // marks exactly one cell, giving the m+k-1 basis cells of a tree
  {
    std::size_t i = 0, j = 0;
    double s = supply[0], t = demand[0];
    while (true) {
      const double take = std::min(s, t);
      x[i][j] += take;
      in_basis[i][j] = 1;
      s -= take;
      t -= take;
      if (i + 1 == m && j + 1 == k) break;
      const bool go_row = (s <= t);
      if (go_row && i + 1 < m) {
        ++i;
        s = supply[i];
      } else if (j + 1 < k) {
        ++j;
        t = demand[j];
      } else if (i + 1 < m) {
        ++i;
        s = supply[i];
      } else {
        break;
      }
    }
  }

  const std::size_t max_pivots = 200 * (m + k) * (m + k) + 10000;
  std::size_t pivots = 0;
  std::vector<double> u(m), v(k);
  std::vector<char> u_set(m), v_set(k);
  std::vector<std::vector<std::size_t>> row_cells(m), col_cells(k);

  while (true) {
    // duals from the spanning basis tree (BFS over basis adjacency)
    for (auto& r : row_cells) r.clear();
    for (auto& c : col_cells) c.clear();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (in_basis[i][j]) {
          row_cells[i].push_back(j);
          col_cells[j].push_back(i);
        }
    std::fill(u_set.begin(), u_set.end(), 0);
    std::fill(v_set.begin(), v_set.end(), 0);
    u[0] = 0.0;
    u_set[0] = 1;
    std::vector<std::size_t> frontier{0};  // rows 0..m-1, cols m..m+k-1
    for (std::size_t qh = 0; qh < frontier.size(); ++qh) {
      const std::size_t node = frontier[qh];
      if (node < m) {
        for (std::size_t j : row_cells[node]) {
          if (v_set[j]) continue;
          v[j] = cost_at(node, j) - u[node];
          v_set[j] = 1;
          frontier.push_back(m + j);
        }
      } else {
        const std::size_t j = node - m;
        for (std::size_t i : col_cells[j]) {
          if (u_set[i]) continue;
          u[i] = cost_at(i, j) - v[j];
          u_set[i] = 1;
          frontier.push_back(i);
        }
      }
    }
    for (std::size_t i = 0; i < m; ++i)
      if (!u_set[i]) throw numeric_error("solve_transport: basis not a tree");
    for (std::size_t j = 0; j < k; ++j)
      if (!v_set[j]) throw numeric_error("solve_transport: basis not a tree");

    // entering cell: most negative reduced cost (lexicographic ties)
    double best = -tol * (1.0 + cmax);
    std::size_t bi = m, bj = k;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        if (in_basis[i][j]) continue;
        const double r = cost_at(i, j) - u[i] - v[j];
        if (r < best - 1e-15) {
          best = r;
          bi = i;
          bj = j;
        }
      }
    if (bi == m) break;  // optimal

    // unique tree path from row bi to col bj through the basis
    const std::size_t nodes = m + k;
    std::vector<int> parent(nodes, -1);
    std::vector<int> parent_cell_i(nodes, -1), parent_cell_j(nodes, -1);
    std::vector<char> seen(nodes, 0);
    std::vector<std::size_t> queue{bi};
    seen[bi] = 1;
    for (std::size_t qh = 0; qh < queue.size(); ++qh) {
      const std::size_t node = queue[qh];
      if (node == m + bj) break;
      if (node < m) {
        for (std::size_t j : row_cells[node]) {
          if (seen[m + j]) continue;
          seen[m + j] = 1;
          parent[m + j] = static_cast<int>(node);
          parent_cell_i[m + j] = static_cast<int>(node);
          parent_cell_j[m + j] = static_cast<int>(j);
          queue.push_back(m + j);
        }
      } else {
        const std::size_t j = node - m;
        for (std::size_t i : col_cells[j]) {
          if (seen[i]) continue;
          seen[i] = 1;
          parent[i] = static_cast<int>(node);
          parent_cell_i[i] = static_cast<int>(i);
          parent_cell_j[i] = static_cast<int>(j);
          queue.push_back(i);
        }
      }
    }
    if (!seen[m + bj]) throw numeric_error("solve_transport: disconnected basis");

    // cycle cells alternate +,-,+,- starting from the entering cell
    std::vector<std::pair<std::size_t, std::size_t>> cycle{{bi, bj}};
    for (std::size_t node = m + bj; node != bi;
         node = static_cast<std::size_t>(parent[node])) {
      cycle.emplace_back(static_cast<std::size_t>(parent_cell_i[node]),
                         static_cast<std::size_t>(parent_cell_j[node]));
    }
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leave = 0;
    for (std::size_t t = 1; t < cycle.size(); t += 2) {
      const double val = x[cycle[t].first][cycle[t].second];
      if (val < theta - 1e-15) {
        theta = val;
        leave = t;
      }
    }
    for (std::size_t t = 0; t < cycle.size(); ++t) {
      auto [ci, cj] = cycle[t];
      if (t % 2 == 0)
        x[ci][cj] += theta;
      else
        x[ci][cj] -= theta;
    }
    auto [li, lj] = cycle[leave];
    x[li][lj] = 0.0;
    in_basis[li][lj] = 0;
    in_basis[bi][bj] = 1;
    if (++pivots > max_pivots)
      throw numeric_error("solve_transport: pivot cap exceeded");
  }

  TransportResult out;
  out.pivots = pivots;
  out.mass = x;
  double residual = 0.0;
  double value = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double r = cost_at(i, j) - u[i] - v[j];
      residual = std::max(residual, -r);
      if (x[i][j] > 1e-12) residual = std::max(residual, std::abs(r) * x[i][j]);
      value += x[i][j] * cost_at(i, j);
      if (forbidden && (*forbidden)[i][j] && x[i][j] > 1e-9)
        throw numeric_error("solve_transport: infeasible (forbidden cell used)");
    }
  out.slackness_residual = residual;
  if (residual > 1e-9 * (1.0 + cmax))
    throw numeric_error("solve_transport: optimality certificate failed");
  // recompute value without big-M noise
  value = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j)
      if (x[i][j] > 0.0) value += x[i][j] * cost[i][j];
  out.value = value;
  return out;
}

}  // namespace lp

// ---------------------------------------------------------------------------
// Brute-force coupling oracles
// ---------------------------------------------------------------------------

namespace detail {

inline bool equal_weights(const Dist1D& p, double tol = 1e-12) {
  const auto w = p.atom_weights();
  for (double wi : w)
    if (std::abs(wi - w[0]) > tol) return false;
  return true;
}

inline std::vector<std::vector<double>> squared_cost(const Dist1D& P,
                                                     const Dist1D& Q) {
  const auto& xs = P.support();
  const auto& ys = Q.support();
  std::vector<std::vector<double>> c(xs.size(), std::vector<double>(ys.size()));
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < ys.size(); ++j)
      c[i][j] = (ys[j] - xs[i]) * (ys[j] - xs[i]);
  return c;
}

}  // namespace detail

/// Exact minimizer of E[(Y1-Y0)^2] over couplings of two atomic laws.
/// Equal-weight pairs with <= 8 atoms per side are settled by exhaustive
/// permutation enumeration; anything else (up to 200 atoms) by the
/// transportation LP.
inline std::pair<Coupling, double> brute_force_min_coupling(const Dist1D& P,
                                                            const Dist1D& Q) {
  if (P.mode() != DistMode::atomic || Q.mode() != DistMode::atomic)
    throw std::invalid_argument("brute_force_min_coupling: atomic laws only");
  const std::size_t m = P.size(), k = Q.size();
  if (m == k && m <= 8 && detail::equal_weights(P) && detail::equal_weights(Q)) {
    const auto& xs = P.support();
    const auto& ys = Q.support();
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<std::size_t> best_perm = perm;
    double best = std::numeric_limits<double>::infinity();
    do {
      double v = 0.0;
      for (std::size_t i = 0; i < m; ++i)
        v += (ys[perm[i]] - xs[i]) * (ys[perm[i]] - xs[i]);
      if (v < best - 1e-18) {
        best = v;
        best_perm = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    std::vector<std::vector<double>> mass(m, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < m; ++i)
      mass[i][best_perm[i]] = 1.0 / static_cast<double>(m);
    return {Coupling{P, Q, std::move(mass)}, best / static_cast<double>(m)};
  }
  if (m > 200 || k > 200)
    throw std::invalid_argument("brute_force_min_coupling: size limit exceeded");
  auto res = lp::solve_transport(P.atom_weights(), Q.atom_weights(),
                                 detail::squared_cost(P, Q));
  return {Coupling{P, Q, std::move(res.mass)}, res.value};
}

/// Exact maximizer of E[(Y1-Y0)^2]; monotone=true restricts to couplings
/// with mass only on {y1 >= y0} (requires stochastic ordering F0 >= F1).
inline std::pair<Coupling, double> brute_force_max_coupling(
    const Dist1D& P, const Dist1D& Q, bool monotone) {
  if (P.mode() != DistMode::atomic || Q.mode() != DistMode::atomic)
    throw std::invalid_argument("brute_force_max_coupling: atomic laws only");
  const std::size_t m = P.size(), k = Q.size();
  if (m > 200 || k > 200)
    throw std::invalid_argument("brute_force_max_coupling: size limit exceeded");
  auto cost = detail::squared_cost(P, Q);
  for (auto& row : cost)
    for (double& c : row) c = -c;
  std::vector<std::vector<char>> forbidden(m, std::vector<char>(k, 0));
  if (monotone) {
    std::vector<double> zs;
    const auto& xs = P.support();
    const auto& ys = Q.support();
    zs.insert(zs.end(), xs.begin(), xs.end());
    zs.insert(zs.end(), ys.begin(), ys.end());
    std::sort(zs.begin(), zs.end());
    zs.erase(std::unique(zs.begin(), zs.end()), zs.end());
    for (double z : zs)
      if (P.cdf_at(z) < Q.cdf_at(z) - 1e-9)
        throw std::invalid_argument(
            "brute_force_max_coupling: stochastic ordering violated");
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (ys[j] < xs[i]) forbidden[i][j] = 1;
  }
  auto res = lp::solve_transport(P.atom_weights(), Q.atom_weights(), cost,
                                 monotone ? &forbidden : nullptr);
  return {Coupling{P, Q, std::move(res.mass)}, -res.value};
}

inline std::pair<Coupling, double> brute_force_max_monotone(const Dist1D& P,
                                                            const Dist1D& Q) {
  return brute_force_max_coupling(P, Q, true);
}

/// Exhaustive multimarginal search: k <= 4 equal-weight atomic laws with
/// <= 5 atoms each; minimizes sum_{a<b} w[a][b] * mean_i (y_a - y_b)^2
/// over joint permutation assignments (the first law keeps its order).
struct MultimarginalResult {
  std::vector<std::vector<std::size_t>> assignment;  // one permutation per law
  double value = 0.0;
};

inline MultimarginalResult multimarginal_min_coupling(
    std::span<const Dist1D> dists,
    const std::vector<std::vector<double>>& pair_weights) {
  const std::size_t k = dists.size();
  if (k < 2 || k > 4)
    throw std::invalid_argument("multimarginal_min_coupling: need 2..4 laws");
  const std::size_t mm = dists[0].size();
  if (mm > 5)
    throw std::invalid_argument("multimarginal_min_coupling: > 5 atoms");
  for (const auto& d : dists) {
    if (d.mode() != DistMode::atomic || d.size() != mm ||
        !detail::equal_weights(d))
      throw std::invalid_argument(
          "multimarginal_min_coupling: equal-weight atomic laws of one size");
  }
  std::vector<std::vector<std::size_t>> perms(k, std::vector<std::size_t>(mm));
  for (auto& p : perms) std::iota(p.begin(), p.end(), 0);
  MultimarginalResult best;
  best.value = std::numeric_limits<double>::infinity();

  auto value_of = [&]() {
    double v = 0.0;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = a + 1; b < k; ++b) {
        if (pair_weights[a][b] == 0.0) continue;
        double s = 0.0;
        for (std::size_t i = 0; i < mm; ++i) {
          const double diff = dists[a].support()[perms[a][i]] -
                              dists[b].support()[perms[b][i]];
          s += diff * diff;
        }
        v += pair_weights[a][b] * s / static_cast<double>(mm);
      }
    return v;
  };

  // nested permutation enumeration over laws 1..k-1
  std::function<void(std::size_t)> recurse = [&](std::size_t level) {
    if (level == k) {
      const double v = value_of();
      if (v < best.value - 1e-18) {
        best.value = v;
        best.assignment = perms;
      }
      return;
    }
    std::sort(perms[level].begin(), perms[level].end());
    do {
      recurse(level + 1);
    } while (std::next_permutation(perms[level].begin(), perms[level].end()));
    std::sort(perms[level].begin(), perms[level].end());
  };
  recurse(1);
  return best;
}

}  // namespace otcf
