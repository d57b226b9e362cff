#pragma once

// Data-driven selection of the tuning constant c.
//
// Huber / Tukey: maximize the nonparametric efficiency factor
//   tau_hat(c) = (sum psi'(e))^2 / (n * sum psi(e)^2)
// over a grid, on residuals standardized by the current scale.
//
// ESL: flag pseudo-outliers |e| >= 2.5 sigma_MAD at a high-breakdown
// initial fit, keep the grid constants with xi(c) in (0, 1], and pick the
// one minimizing det V(c) where V(c) = I^-1 Sigma I^-1 is the sandwich
// covariance of the ESL score at the initial fit. ESL residuals and c are
// on the raw (unstandardized) scale: rho_c(e) = 1 - exp(-e^2 / c).

#include "robpanel/error.hpp"
#include "robpanel/linalg.hpp"
#include "robpanel/losses.hpp"
#include "robpanel/panel.hpp"
#include "robpanel/scale.hpp"

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

namespace robpanel {

struct EfficiencyValue {
  double value = 0.0;
  bool defined = true;  // false when every psi vanishes (0 / 0)
};

inline EfficiencyValue efficiency_factor(std::span<const double> std_residuals,
                                         const LossSpec& spec) {
  double sum_dpsi = 0.0;
  double sum_psi2 = 0.0;
  for (double e : std_residuals) {
    sum_dpsi += psi_prime(spec, e);
    const double p = psi(spec, e);
    sum_psi2 += p * p;
  }
  if (!(sum_psi2 > 0.0)) return {0.0, false};
  const auto n = static_cast<double>(std_residuals.size());
  return {sum_dpsi * sum_dpsi / (n * sum_psi2), true};
}

// Evenly spaced grid lo, lo + step, ..., hi (inclusive up to rounding).
inline std::vector<double> linear_grid(double lo, double hi, double step) {
  std::vector<double> g;
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  g.reserve(count);
  for (std::size_t j = 0; j < count; ++j) g.push_back(lo + step * static_cast<double>(j));
  return g;
}

inline std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  std::vector<double> g;
  g.reserve(count);
  if (count == 1) {
    g.push_back(lo);
    return g;
  }
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t j = 0; j < count; ++j)
    g.push_back(std::exp(a + (b - a) * static_cast<double>(j) / static_cast<double>(count - 1)));
  return g;
}

// {0.05, 0.10, ..., 3.00}
inline std::vector<double> default_huber_grid() { return linear_grid(0.05, 3.0, 0.05); }
// {1.0, 1.2, ..., 10.0}
inline std::vector<double> default_tukey_grid() { return linear_grid(1.0, 10.0, 0.2); }

inline std::vector<double> default_grid(LossFamily family) {
  return family == LossFamily::Huber ? default_huber_grid() : default_tukey_grid();
}

// 50 log-spaced constants in [0.1, 100] * sigma_mad^2.
inline std::vector<double> default_esl_grid(double sigma_mad, std::size_t count = 50) {
  const double s2 = sigma_mad * sigma_mad;
  return log_grid(0.1 * s2, 100.0 * s2, count);
}

struct EfficiencyCurve {
  std::vector<double> grid;
  std::vector<double> tau_hat;
  std::vector<bool> defined;
  double c_star = 0.0;
  double tau_star = 0.0;
};

// Grid search on standardized residuals; ties resolve to the smallest c.
inline EfficiencyCurve select_c_from_residuals(std::span<const double> std_residuals,
                                               LossFamily family, std::span<const double> grid) {
  if (grid.empty()) throw std::invalid_argument("tuning grid is empty");
  EfficiencyCurve curve;
  curve.grid.assign(grid.begin(), grid.end());
  curve.tau_hat.reserve(grid.size());
  curve.defined.reserve(grid.size());
  bool any = false;
  for (double c : grid) {
    const auto tau = efficiency_factor(std_residuals, LossSpec(family, c));
    curve.tau_hat.push_back(tau.value);
    curve.defined.push_back(tau.defined);
    if (tau.defined && (!any || tau.value > curve.tau_star)) {
      curve.tau_star = tau.value;
      curve.c_star = c;
      any = true;
    }
  }
  if (!any)
    throw NoValidTuning("efficiency factor undefined at every grid constant for " +
                        std::string(to_string(family)));
  return curve;
}

inline Vector residuals(const CenteredPanel& panel, const Vector& beta) {
  return panel.y - panel.x * beta;
}

inline EfficiencyCurve select_c_grid(const CenteredPanel& panel, LossFamily family,
                                     const Vector& beta_current, double sigma,
                                     std::span<const double> grid) {
  if (family == LossFamily::Esl)
    throw std::invalid_argument("select_c_grid handles Huber and Tukey only");
  if (!(sigma > 0.0)) throw ZeroScale("select_c_grid: scale must be positive");
  const Vector e = residuals(panel, beta_current) / sigma;
  return select_c_from_residuals(std::span<const double>(e.data(), static_cast<std::size_t>(e.size())),
                                 family, grid);
}

// Unit-major indices j = i * T + t with |e_j| >= 2.5 sigma_mad.
inline std::vector<std::size_t> pseudo_outlier_set(std::span<const double> residuals,
                                                   double sigma_mad) {
  if (!(sigma_mad > 0.0)) throw ZeroScale("pseudo_outlier_set: sigma_mad must be positive");
  std::vector<std::size_t> out;
  const double cut = 2.5 * sigma_mad;
  for (std::size_t j = 0; j < residuals.size(); ++j)
    if (std::abs(residuals[j]) >= cut) out.push_back(j);
  return out;
}

// xi(c) = 2m / n + (2 / n) * sum over retained residuals of rho_c(e), ESL rho.
inline double xi(double c, std::span<const double> residuals_good, std::size_t m, std::size_t nt) {
  if (nt < m) throw std::invalid_argument("xi: more outliers than observations");
  if (residuals_good.size() != nt - m) throw std::invalid_argument("xi: retained residual count != nt - m");
  const LossSpec spec(LossFamily::Esl, c);
  double sum = 0.0;
  for (double e : residuals_good) sum += rho(spec, e);
  const auto n = static_cast<double>(nt);
  return 2.0 * static_cast<double>(m) / n + 2.0 * sum / n;
}

inline bool xi_admissible(double value) { return value > 0.0 && value <= 1.0; }

struct EslCovariance {
  Matrix info;    // I(beta0)
  Matrix sigma;   // score covariance
  Matrix v;       // I^-1 Sigma I^-1
  bool defined = true;
};

inline EslCovariance esl_cov(const CenteredPanel& panel, const Vector& beta0, double c) {
  if (static_cast<std::size_t>(beta0.size()) != panel.n_regressors())
    throw ShapeMismatch("esl_cov: beta0 length does not match K");
  const Vector e = residuals(panel, beta0);
  const auto n = e.size();
  const auto k = panel.x.cols();
  const double nd = static_cast<double>(n);

  double curvature = 0.0;
  Matrix scores(n, k);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double q = e(j) * e(j) / c;
    const double g = std::exp(-q);
    curvature += g * (2.0 * q - 1.0);
    scores.row(j) = (g * 2.0 * e(j) / c) * panel.x.row(j);
  }
  curvature /= nd;

  EslCovariance out;
  out.info = (2.0 / c) * curvature * (cross_product(panel.x) / nd);
  const Eigen::RowVectorXd mean = scores.colwise().mean();
  const Matrix centered = scores.rowwise() - mean;
  out.sigma = centered.transpose() * centered / nd;
  if (linalg::numerically_singular(out.info)) {
    out.defined = false;
    out.v = Matrix::Constant(k, k, std::numeric_limits<double>::quiet_NaN());
    return out;
  }
  const Matrix inv = out.info.inverse();
  out.v = inv * out.sigma * inv;
  return out;
}

struct EslTuningState {
  Vector beta0;
  double sigma_mad = 0.0;
  std::vector<std::size_t> outlier_indices;
  std::vector<double> grid;
  std::vector<double> xi_values;
  std::vector<double> det_v;
  std::vector<bool> det_defined;
  double c_selected = 0.0;

  std::size_t outlier_count() const { return outlier_indices.size(); }
};

inline EslTuningState esl_select_c(const CenteredPanel& panel, const Vector& beta0,
                                   std::span<const double> grid) {
  if (grid.empty()) throw std::invalid_argument("esl_select_c: grid is empty");
  EslTuningState st;
  st.beta0 = beta0;
  st.grid.assign(grid.begin(), grid.end());
  const Vector e = residuals(panel, beta0);
  const std::span<const double> es(e.data(), static_cast<std::size_t>(e.size()));
  try {
    st.sigma_mad = mad_scale(es).value;
    st.outlier_indices = pseudo_outlier_set(es, st.sigma_mad);
  } catch (const ZeroScale&) {
    // Exact fit of the bulk: every non-zero residual is a pseudo-outlier.
    st.sigma_mad = 0.0;
    for (std::size_t j = 0; j < es.size(); ++j)
      if (es[j] != 0.0) st.outlier_indices.push_back(j);
  }

  std::vector<double> good;
  good.reserve(es.size());
  {
    std::size_t next = 0;
    for (std::size_t j = 0; j < es.size(); ++j) {
      if (next < st.outlier_indices.size() && st.outlier_indices[next] == j) {
        ++next;
        continue;
      }
      good.push_back(es[j]);
    }
  }
  const std::size_t m = st.outlier_indices.size();
  const std::size_t nt = es.size();

  bool found = false;
  double best = 0.0;
  double xi_min = std::numeric_limits<double>::infinity();
  double xi_max = -xi_min;
  for (double c : grid) {
    const double x = xi(c, good, m, nt);
    st.xi_values.push_back(x);
    xi_min = std::min(xi_min, x);
    xi_max = std::max(xi_max, x);
    if (!xi_admissible(x)) {
      st.det_v.push_back(std::numeric_limits<double>::quiet_NaN());
      st.det_defined.push_back(false);
      continue;
    }
    const auto cov = esl_cov(panel, beta0, c);
    const double d = cov.defined ? cov.v.determinant() : std::numeric_limits<double>::quiet_NaN();
    st.det_v.push_back(d);
    st.det_defined.push_back(cov.defined);
    if (cov.defined && (!found || d < best)) {
      best = d;
      st.c_selected = c;
      found = true;
    }
  }
  if (!found) {
    std::ostringstream os;
    os << "no ESL tuning constant with xi in (0, 1] and a defined covariance; xi range ["
       << xi_min << ", " << xi_max << "], m = " << m;
    throw NoValidTuning(os.str());
  }
  return st;
}

// Uses the default log grid around the MAD scale of the residuals at beta0.
inline EslTuningState esl_select_c(const CenteredPanel& panel, const Vector& beta0) {
  const Vector e = residuals(panel, beta0);
  const double s = mad_scale(std::span<const double>(e.data(), static_cast<std::size_t>(e.size()))).value;
  const auto grid = default_esl_grid(s);
  return esl_select_c(panel, beta0, grid);
}

}  // namespace robpanel
