#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace otcf {

/// Observational rows (x: covariate vector, a: treatment, y: outcome).
/// Stored column-major-ish: x is row-major n x d, a and y are columns.
struct Dataset {
  std::size_t d = 0;
  std::vector<double> x;  // n*d, row-major
  std::vector<double> a;
  std::vector<double> y;

  std::size_t n() const { return a.size(); }

  std::span<const double> row_x(std::size_t i) const {
    return {x.data() + i * d, d};
  }

  void push_row(std::span<const double> xs, double ai, double yi) {
    if (xs.size() != d) throw std::invalid_argument("push_row: bad x width");
    x.insert(x.end(), xs.begin(), xs.end());
    a.push_back(ai);
    y.push_back(yi);
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.d = d;
    out.x.reserve(idx.size() * d);
    out.a.reserve(idx.size());
    out.y.reserve(idx.size());
    for (std::size_t i : idx) {
      out.x.insert(out.x.end(), x.begin() + i * d, x.begin() + (i + 1) * d);
      out.a.push_back(a[i]);
      out.y.push_back(y[i]);
    }
    return out;
  }

  std::vector<double> distinct_treatments() const {
    std::vector<double> v(a);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  }

  bool treatment_is_discrete(std::size_t max_levels = 10) const {
    std::set<double> seen;
    for (double ai : a) {
      seen.insert(ai);
      if (seen.size() > max_levels) return false;
    }
    return true;
  }
};

/// Read a dataset from CSV with header x1..xd,a,y (d may be zero).
/// Lines starting with '#' are skipped. Parse errors report the line.
inline Dataset read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("read_csv: cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("read_csv: " + path + ":" +
                                std::to_string(lineno) + ": " + what);
  };
  // header
  std::vector<std::string> cols;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      while (!tok.empty() && (tok.back() == '\r' || tok.back() == ' '))
        tok.pop_back();
      cols.push_back(tok);
    }
    break;
  }
  if (cols.size() < 2 || cols[cols.size() - 2] != "a" || cols.back() != "y")
    fail("header must be x1..xd,a,y");
  const std::size_t d = cols.size() - 2;
  for (std::size_t i = 0; i < d; ++i) {
    if (cols[i] != "x" + std::to_string(i + 1))
      fail("covariate columns must be named x1..xd");
  }
  Dataset data;
  data.d = d;
  std::vector<double> xs(d);
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string tok;
    std::vector<double> vals;
    while (std::getline(ss, tok, ',')) {
      try {
        vals.push_back(std::stod(tok));
      } catch (const std::exception&) {
        fail("cannot parse value '" + tok + "'");
      }
    }
    if (vals.size() != d + 2) fail("expected " + std::to_string(d + 2) +
                                   " fields, got " + std::to_string(vals.size()));
    for (std::size_t i = 0; i < d; ++i) xs[i] = vals[i];
    data.push_row(xs, vals[d], vals[d + 1]);
  }
  if (data.n() == 0) fail("no data rows");
  return data;
}

inline void write_csv(const std::string& path, const Dataset& data,
                      std::span<const std::string> comment_lines = {}) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("write_csv: cannot open " + path);
  out.precision(17);
  for (const auto& c : comment_lines) out << "# " << c << "\n";
  for (std::size_t i = 0; i < data.d; ++i) out << "x" << (i + 1) << ",";
  out << "a,y\n";
  for (std::size_t r = 0; r < data.n(); ++r) {
    for (std::size_t i = 0; i < data.d; ++i) out << data.x[r * data.d + i] << ",";
    out << data.a[r] << "," << data.y[r] << "\n";
  }
}

}  // namespace otcf
