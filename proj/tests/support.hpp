#pragma once

// Shared fixtures and independent reference computations for the tests.

#include "robpanel/io.hpp"
#include "robpanel/panel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <vector>

namespace testutil {

using robpanel::Matrix;
using robpanel::PanelData;
using robpanel::Vector;

inline std::filesystem::path data_path(const char* name) { return std::filesystem::path(ROBPANEL_DATA_DIR) / name; }

inline PanelData gasoline() { return robpanel::io::read_panel_csv(data_path("gasoline.csv")); }

// Plain sort-based median.
inline double sorted_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

using LMatrix = std::vector<std::vector<long double>>;

// Gauss-Jordan inverse with partial pivoting, long double throughout.
inline LMatrix invert(LMatrix a) {
  const std::size_t k = a.size();
  LMatrix inv(k, std::vector<long double>(k, 0.0L));
  for (std::size_t i = 0; i < k; ++i) inv[i][i] = 1.0L;
  for (std::size_t col = 0; col < k; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < k; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    if (a[piv][col] == 0.0L) throw std::runtime_error("oracle: singular matrix");
    std::swap(a[piv], a[col]);
    std::swap(inv[piv], inv[col]);
    const long double d = a[col][col];
    for (std::size_t j = 0; j < k; ++j) {
      a[col][j] /= d;
      inv[col][j] /= d;
    }
    for (std::size_t r = 0; r < k; ++r) {
      if (r == col) continue;
      const long double f = a[r][col];
      for (std::size_t j = 0; j < k; ++j) {
        a[r][j] -= f * a[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  return inv;
}

// Within-group LS by explicit normal equations: demeaning, X'X, X'y and the
// inverse are all formed in long double straight from the raw cells.
inline std::vector<long double> within_ls_oracle(const PanelData& p) {
  const std::size_t n = p.n_units(), t = p.n_periods(), k = p.n_regressors();
  LMatrix xtx(k, std::vector<long double>(k, 0.0L));
  std::vector<long double> xty(k, 0.0L);
  for (std::size_t i = 0; i < n; ++i) {
    long double ym = 0.0L;
    std::vector<long double> xm(k, 0.0L);
    for (std::size_t s = 0; s < t; ++s) {
      ym += p.y(i, s);
      for (std::size_t a = 0; a < k; ++a) xm[a] += p.x(i, s, a);
    }
    ym /= static_cast<long double>(t);
    for (auto& v : xm) v /= static_cast<long double>(t);
    for (std::size_t s = 0; s < t; ++s) {
      const long double yc = p.y(i, s) - ym;
      for (std::size_t a = 0; a < k; ++a) {
        const long double xa = p.x(i, s, a) - xm[a];
        xty[a] += xa * yc;
        for (std::size_t b = 0; b < k; ++b) xtx[a][b] += xa * (p.x(i, s, b) - xm[b]);
      }
    }
  }
  const LMatrix inv = invert(xtx);
  std::vector<long double> beta(k, 0.0L);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) beta[a] += inv[a][b] * xty[b];
  return beta;
}

// y = x beta + alpha_i + noise * N(0, 1), x ~ N(0, 1), alpha_i ~ U(0, 10).
inline PanelData random_panel(std::size_t n, std::size_t t, const Vector& beta, std::uint64_t seed,
                              double noise = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> a(0.0, 10.0);
  const auto k = beta.size();
  const auto rows = static_cast<Eigen::Index>(n * t);
  Matrix x(rows, k);
  Vector y(rows);
  for (std::size_t i = 0; i < n; ++i) {
    const double alpha = a(rng);
    for (std::size_t s = 0; s < t; ++s) {
      const auto r = static_cast<Eigen::Index>(i * t + s);
      for (Eigen::Index q = 0; q < k; ++q) x(r, q) = z(rng);
      y(r) = x.row(r).dot(beta) + alpha + noise * z(rng);
    }
  }
  return PanelData(n, t, std::move(y), std::move(x));
}

struct EslCov2 {
  double info[2][2];
  double sigma[2][2];
  double v[2][2];
  double det_v;
};

// ESL sandwich for K = 2 assembled entry by entry with scalar loops.
inline EslCov2 esl_cov_oracle(const robpanel::CenteredPanel& panel, const Vector& beta0, double c) {
  const auto n = panel.y.size();
  double curv = 0.0, sxx[2][2] = {{0, 0}, {0, 0}}, mean_s[2] = {0, 0};
  std::vector<std::array<double, 2>> s(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    const double e = panel.y(j) - panel.x(j, 0) * beta0(0) - panel.x(j, 1) * beta0(1);
    const double g = std::exp(-e * e / c);
    curv += g * (2.0 * e * e / c - 1.0);
    for (int a = 0; a < 2; ++a) {
      s[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)] = g * 2.0 * e / c * panel.x(j, a);
      mean_s[a] += s[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)];
      for (int b = 0; b < 2; ++b) sxx[a][b] += panel.x(j, a) * panel.x(j, b);
    }
  }
  const double nd = static_cast<double>(n);
  curv /= nd;
  EslCov2 out{};
  for (int a = 0; a < 2; ++a) {
    mean_s[a] /= nd;
    for (int b = 0; b < 2; ++b) out.info[a][b] = 2.0 / c * curv * sxx[a][b] / nd;
  }
  for (const auto& sj : s)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        out.sigma[a][b] += (sj[static_cast<std::size_t>(a)] - mean_s[a]) * (sj[static_cast<std::size_t>(b)] - mean_s[b]) / nd;
  const double det = out.info[0][0] * out.info[1][1] - out.info[0][1] * out.info[1][0];
  const double inv[2][2] = {{out.info[1][1] / det, -out.info[0][1] / det},
                            {-out.info[1][0] / det, out.info[0][0] / det}};
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      double v = 0.0;
      for (int p = 0; p < 2; ++p)
        for (int q = 0; q < 2; ++q) v += inv[a][p] * out.sigma[p][q] * inv[q][b];
      out.v[a][b] = v;
    }
  out.det_v = out.v[0][0] * out.v[1][1] - out.v[0][1] * out.v[1][0];
  return out;
}

struct EslScan {
  double sigma_mad;
  std::size_t m;
  std::vector<double> grid;
  std::vector<double> xi;
  double c_selected;
};

// Exhaustive ESL tuning: sort-based MAD, pseudo-outliers, the 50-point log
// grid, xi and det V at every grid constant, smallest det over xi in (0, 1].
inline EslScan esl_scan_oracle(const robpanel::CenteredPanel& panel, const Vector& beta0) {
  const Vector e = panel.y - panel.x * beta0;
  std::vector<double> ev(e.data(), e.data() + e.size());
  const double med = sorted_median(ev);
  std::vector<double> dev;
  for (double v : ev) dev.push_back(std::abs(v - med));
  EslScan out{};
  out.sigma_mad = 1.4826 * sorted_median(dev);
  std::vector<double> good;
  for (double v : ev) {
    if (std::abs(v) >= 2.5 * out.sigma_mad)
      ++out.m;
    else
      good.push_back(v);
  }
  const double s2 = out.sigma_mad * out.sigma_mad;
  double best = INFINITY;
  for (int j = 0; j < 50; ++j) {
    const double c = std::exp(std::log(0.1 * s2) + (std::log(100.0 * s2) - std::log(0.1 * s2)) * j / 49.0);
    out.grid.push_back(c);
    double r = 0.0;
    for (double v : good) r += 1.0 - std::exp(-v * v / c);
    const double x = 2.0 * static_cast<double>(out.m) / static_cast<double>(ev.size()) + 2.0 * r / static_cast<double>(ev.size());
    out.xi.push_back(x);
    if (!(x > 0.0 && x <= 1.0)) continue;
    const double d = esl_cov_oracle(panel, beta0, c).det_v;
    if (d < best) {
      best = d;
      out.c_selected = c;
    }
  }
  return out;
}

inline Vector beta_true() { return (Vector(2) << 2.4, -1.2).finished(); }

inline double max_abs_diff(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace testutil
