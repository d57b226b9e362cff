#pragma once

#include "robpanel/error.hpp"
#include "robpanel/linalg.hpp"
#include "robpanel/losses.hpp"
#include "robpanel/panel.hpp"
#include "robpanel/scale.hpp"
#include "robpanel/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace robpanel {

struct IrlsConfig {
  double tol = 1e-8;  // max-norm coefficient change
  int max_iter = 500;
  bool rescale_each_iter = false;  // re-estimate median|r| / 0.6745 before each reweighting
};

inline constexpr double kTukeyDefaultC = 4.685;

namespace detail {

inline EstimatorKind estimator_for(LossFamily f) {
  switch (f) {
    case LossFamily::Huber: return EstimatorKind::Huber;
    case LossFamily::Tukey: return EstimatorKind::Tukey;
    case LossFamily::Esl: return EstimatorKind::ESL;
  }
  return EstimatorKind::LS;
}

inline double objective(const LossSpec& spec, const Vector& r, double sigma) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < r.size(); ++j) s += rho(spec, r(j) / sigma);
  return s;
}

inline std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

// MAD scale without the zero check, reusing `scratch`.
inline double mad_unchecked(const Vector& r, std::vector<double>& scratch) {
  const auto n = static_cast<std::size_t>(r.size());
  scratch.assign(r.data(), r.data() + n);
  auto mid = scratch.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(scratch.begin(), mid, scratch.end());
  double center = *mid;
  if (n % 2 == 0) center = 0.5 * (center + *std::max_element(scratch.begin(), mid));
  for (std::size_t j = 0; j < n; ++j) scratch[j] = std::abs(r(static_cast<Eigen::Index>(j)) - center);
  mid = scratch.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(scratch.begin(), mid, scratch.end());
  double med = *mid;
  if (n % 2 == 0) med = 0.5 * (med + *std::max_element(scratch.begin(), mid));
  return kMadConsistency * med;
}

}  // namespace detail

// Iteratively reweighted least squares at a fixed loss and scale.
inline FitResult irls_fit(const CenteredPanel& panel, const LossSpec& spec, const Vector& beta_init,
                          double sigma, const IrlsConfig& config = {}) {
  if (!(sigma > 0.0)) throw ZeroScale("irls_fit: scale must be positive");
  if (static_cast<std::size_t>(beta_init.size()) != panel.n_regressors())
    throw ShapeMismatch("irls_fit: beta_init length does not match K");
  if (!(config.tol > 0.0) || config.max_iter < 1)
    throw std::invalid_argument("irls_fit: tol must be > 0 and max_iter >= 1");

  FitResult fit;
  fit.estimator = detail::estimator_for(spec.family);
  fit.loss = spec;
  fit.c_selected = spec.c;
  fit.converged = false;

  Vector beta = beta_init;
  Vector w(panel.y.size());
  for (int it = 1; it <= config.max_iter; ++it) {
    const Vector r = panel.y - panel.x * beta;
    if (config.rescale_each_iter) sigma = initial_scale(detail::as_span(r)).value;
    for (Eigen::Index j = 0; j < r.size(); ++j) w(j) = weight(spec, r(j) / sigma);
    const auto next = linalg::weighted_least_squares(panel.x, panel.y, &w);
    if (!next)
      throw SingularWeightedDesign("weighted cross-product is singular at IRLS iteration " +
                                   std::to_string(it) + " (" + std::string(to_string(spec.family)) +
                                   ", c = " + std::to_string(spec.c) + ")");
    const double change = (*next - beta).cwiseAbs().maxCoeff();
    beta = *next;
    fit.iterations = it;
    fit.objective_trace.push_back(detail::objective(spec, panel.y - panel.x * beta, sigma));
    if (change < config.tol) {
      fit.converged = true;
      break;
    }
  }

  const Vector r = panel.y - panel.x * beta;
  for (Eigen::Index j = 0; j < r.size(); ++j) w(j) = weight(spec, r(j) / sigma);
  fit.beta = beta;
  fit.sigma_hat = sigma;
  fit.weights = w;
  return fit;
}

// High-breakdown starting value: best of `n_subsamples` random elemental
// (K-observation) exact fits scored by the MAD of their residuals, refined
// by Tukey IRLS at c = 4.685 with that MAD as the scale. Stands in for an
// MM-estimator.
inline Vector high_breakdown_init(const CenteredPanel& panel, std::size_t n_subsamples = 500,
                                  std::uint64_t seed = 0) {
  const auto n = panel.y.size();
  const auto k = panel.x.cols();
  if (n < k + 1) throw DegenerateDesign("high_breakdown_init needs NT >= K + 1");
  if (n_subsamples < 1) throw std::invalid_argument("high_breakdown_init: n_subsamples must be >= 1");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(k));
  std::vector<double> scratch;
  Matrix a(k, k);
  Vector b(k);

  bool found = false;
  double best_score = 0.0;
  Vector best;
  for (std::size_t s = 0; s < n_subsamples; ++s) {
    for (Eigen::Index q = 0; q < k; ++q) {
      Eigen::Index j;
      do {
        j = pick(rng);
      } while (std::find(idx.begin(), idx.begin() + q, j) != idx.begin() + q);
      idx[static_cast<std::size_t>(q)] = j;
      a.row(q) = panel.x.row(j);
      b(q) = panel.y(j);
    }
    Eigen::FullPivLU<Matrix> lu(a);
    if (lu.rank() < k) continue;
    const Vector cand = lu.solve(b);
    const double score = detail::mad_unchecked(panel.y - panel.x * cand, scratch);
    if (!found || score < best_score) {
      best_score = score;
      best = cand;
      found = true;
    }
  }
  if (!found) throw DegenerateDesign("every elemental subset was singular");
  if (!(best_score > 0.0)) return best;

  try {
    return irls_fit(panel, LossSpec(LossFamily::Tukey, kTukeyDefaultC), best, best_score).beta;
  } catch (const SingularWeightedDesign&) {
    return best;
  }
}

enum class StartPolicy {
  HighBreakdown,  // high_breakdown_init (default)
  WithinLs,       // within-group LS
};

struct MEstimatorOptions {
  std::optional<double> fixed_c;  // nullopt: select c by maximizing tau_hat
  StartPolicy start = StartPolicy::HighBreakdown;
  std::optional<Vector> beta_init;  // overrides `start`
  std::uint64_t seed = 0;
  std::size_t n_subsamples = 500;
  std::vector<double> grid;  // empty: family default
  IrlsConfig irls;
};

// Huber / Tukey with data-driven c: start, scale median|r| / 0.6745 at the
// start, c maximizing tau_hat at the start, then IRLS at that c.
inline FitResult fit_mestimator(const CenteredPanel& centered, LossFamily family,
                                const MEstimatorOptions& opt = {}) {
  if (family == LossFamily::Esl) throw std::invalid_argument("fit_mestimator: use fit_esl for ESL");
  Vector start;
  if (opt.beta_init) {
    start = *opt.beta_init;
  } else if (opt.start == StartPolicy::WithinLs) {
    start = within_ls(centered).beta;
  } else {
    start = high_breakdown_init(centered, opt.n_subsamples, opt.seed);
  }
  const Vector r = centered.y - centered.x * start;
  const double sigma = initial_scale(detail::as_span(r)).value;

  double c = 0.0;
  if (opt.fixed_c) {
    c = *opt.fixed_c;
  } else {
    const auto grid = opt.grid.empty() ? default_grid(family) : opt.grid;
    c = select_c_grid(centered, family, start, sigma, grid).c_star;
  }
  return irls_fit(centered, LossSpec(family, c), start, sigma, opt.irls);
}

inline FitResult fit_mestimator(const PanelData& panel, LossFamily family,
                                const MEstimatorOptions& opt = {}) {
  return fit_mestimator(within_transform(panel), family, opt);
}

struct EslOptions {
  IrlsConfig irls;
  std::uint64_t seed = 0;
  std::size_t n_subsamples = 500;
  std::size_t grid_size = 50;
  std::vector<double> grid;  // empty: log grid around the initial MAD scale
  int max_outer = 3;
  double c_rel_tol = 0.01;
  std::optional<Vector> beta_init;  // overrides high_breakdown_init
};

// ESL with data-driven c. The grid is fixed from the MAD scale at the
// high-breakdown start; the outer loop repeats (outliers, c, IRLS) until
// both beta and c settle or `max_outer` passes have run.
inline FitResult fit_esl(const CenteredPanel& centered, const EslOptions& opt = {}) {
  Vector beta0 = opt.beta_init ? *opt.beta_init
                               : high_breakdown_init(centered, opt.n_subsamples, opt.seed);
  std::vector<double> grid = opt.grid;
  if (grid.empty()) {
    const Vector r = centered.y - centered.x * beta0;
    grid = default_esl_grid(mad_scale(detail::as_span(r)).value, opt.grid_size);
  }

  FitResult fit;
  std::optional<double> prev_c;
  for (int outer = 1; outer <= std::max(1, opt.max_outer); ++outer) {
    const auto st = esl_select_c(centered, beta0, grid);
    const double c = st.c_selected;
    const double s = st.sigma_mad > 0.0 ? st.sigma_mad : 1.0;
    fit = irls_fit(centered, LossSpec(LossFamily::Esl, c / (s * s)), beta0, s, opt.irls);
    fit.c_selected = c;
    fit.outer_iterations = outer;
    const double change = (fit.beta - beta0).cwiseAbs().maxCoeff();
    const bool settled = prev_c && change < opt.irls.tol && std::abs(c - *prev_c) / c < opt.c_rel_tol;
    beta0 = fit.beta;
    prev_c = c;
    if (settled) break;
  }
  return fit;
}

inline FitResult fit_esl(const PanelData& panel, const EslOptions& opt = {}) {
  return fit_esl(within_transform(panel), opt);
}

struct SandwichCovariance {
  Matrix matrix;
  double psi_sq_mean = 0.0;
  double psi_prime_mean = 0.0;
  double sigma = 0.0;

  Vector std_errors() const { return matrix.diagonal().cwiseMax(0.0).cwiseSqrt(); }
  // Plug-in efficiency factor psi'^2 / psi^2.
  double efficiency() const { return psi_prime_mean * psi_prime_mean / psi_sq_mean; }
};

// (mean psi^2 / (mean psi')^2) * sigma^2 * (sum x x')^-1 on r / sigma.
inline SandwichCovariance sandwich_se(const CenteredPanel& panel, const FitResult& fit,
                                      const LossSpec& spec) {
  if (!(fit.sigma_hat > 0.0)) throw ZeroScale("sandwich_se: fit has no positive scale");
  const Vector r = (panel.y - panel.x * fit.beta) / fit.sigma_hat;
  double s2 = 0.0;
  double s1 = 0.0;
  for (Eigen::Index j = 0; j < r.size(); ++j) {
    const double p = psi(spec, r(j));
    s2 += p * p;
    s1 += psi_prime(spec, r(j));
  }
  const auto n = static_cast<double>(r.size());
  SandwichCovariance out;
  out.psi_sq_mean = s2 / n;
  out.psi_prime_mean = s1 / n;
  out.sigma = fit.sigma_hat;
  if (!(out.psi_prime_mean > 0.0))
    throw UnstableCurvature("mean psi' is not positive (" + std::to_string(out.psi_prime_mean) + ")");
  const Matrix xtx = cross_product(panel.x);
  if (linalg::numerically_singular(xtx))
    throw SingularDesign("centered cross-product is singular; null direction " +
                         linalg::format_vector(linalg::null_direction(panel.x)));
  const double factor = out.psi_sq_mean / (out.psi_prime_mean * out.psi_prime_mean);
  out.matrix = factor * fit.sigma_hat * fit.sigma_hat * xtx.inverse();
  out.matrix = 0.5 * (out.matrix + out.matrix.transpose()).eval();
  return out;
}

inline SandwichCovariance sandwich_se(const CenteredPanel& panel, const FitResult& fit) {
  if (!fit.loss) throw std::invalid_argument("sandwich_se: fit carries no loss specification");
  return sandwich_se(panel, fit, *fit.loss);
}

struct FitOptions {
  std::optional<double> fixed_c;
  std::uint64_t seed = 0;
  std::size_t n_subsamples = 500;
  IrlsConfig irls;
};

// Dispatch over the four estimators. Robust fits are returned with sandwich
// standard errors when `with_se` is set.
inline FitResult fit_estimator(const CenteredPanel& centered, EstimatorKind kind,
                               const FitOptions& opt = {}, bool with_se = false) {
  FitResult fit;
  switch (kind) {
    case EstimatorKind::LS:
      return within_ls(centered);
    case EstimatorKind::Huber:
    case EstimatorKind::Tukey: {
      MEstimatorOptions m;
      m.fixed_c = opt.fixed_c;
      m.seed = opt.seed;
      m.n_subsamples = opt.n_subsamples;
      m.irls = opt.irls;
      fit = fit_mestimator(centered, kind == EstimatorKind::Huber ? LossFamily::Huber : LossFamily::Tukey, m);
      break;
    }
    case EstimatorKind::ESL: {
      EslOptions e;
      e.seed = opt.seed;
      e.n_subsamples = opt.n_subsamples;
      e.irls = opt.irls;
      if (opt.fixed_c) {
        // A fixed ESL constant is taken on the raw residual scale: one
        // IRLS pass from the high-breakdown start.
        const Vector beta0 = high_breakdown_init(centered, opt.n_subsamples, opt.seed);
        const Vector r = centered.y - centered.x * beta0;
        const double s = mad_scale(detail::as_span(r)).value;
        fit = irls_fit(centered, LossSpec(LossFamily::Esl, *opt.fixed_c / (s * s)), beta0, s, opt.irls);
        fit.c_selected = *opt.fixed_c;
      } else {
        fit = fit_esl(centered, e);
      }
      break;
    }
  }
  if (with_se) fit.std_errors = sandwich_se(centered, fit).std_errors();
  return fit;
}

inline FitResult fit_estimator(const PanelData& panel, EstimatorKind kind, const FitOptions& opt = {},
                               bool with_se = false) {
  return fit_estimator(within_transform(panel), kind, opt, with_se);
}

}  // namespace robpanel
