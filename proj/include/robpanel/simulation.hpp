#pragma once

// Monte Carlo harness: the static fixed-effects data-generating process,
// outlier injection schemes, and MSE / prediction-RMSE studies over seeded
// replications.
//
// Every replication draws from generators seeded by derive_seed(master, s,
// stream), so results do not depend on S, on the thread count, or on the
// order replications are executed in.

#include "robpanel/error.hpp"
#include "robpanel/m_estimator.hpp"
#include "robpanel/panel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace robpanel {

// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::uint64_t stream = 0) {
  return mix64(mix64(mix64(master) ^ index) ^ (stream * 0xD1B54A32D192ED03ULL));
}

enum class ErrorDist { Normal01, StudentT5, ChiSq4, Cauchy01 };

inline constexpr ErrorDist kAllErrorDists[] = {ErrorDist::Normal01, ErrorDist::StudentT5,
                                               ErrorDist::ChiSq4, ErrorDist::Cauchy01};

inline std::string_view to_string(ErrorDist d) {
  switch (d) {
    case ErrorDist::Normal01: return "normal";
    case ErrorDist::StudentT5: return "t5";
    case ErrorDist::ChiSq4: return "chisq4";
    case ErrorDist::Cauchy01: return "cauchy";
  }
  return "?";
}

inline std::optional<ErrorDist> parse_error_dist(std::string_view s) {
  for (auto d : kAllErrorDists)
    if (to_string(d) == s) return d;
  return std::nullopt;
}

struct DgpConfig {
  std::size_t n_units = 120;
  std::size_t n_periods = 2;
  Vector beta = (Vector(2) << 2.4, -1.2).finished();
  Vector gamma = (Vector(2) << 2.0, 4.0).finished();
  ErrorDist error_dist = ErrorDist::Normal01;
  std::uint64_t seed = 0;
  bool noiseless = false;  // epsilon == 0; every other draw is unchanged (test hook)
};

namespace detail {

inline double draw_error(ErrorDist d, std::mt19937_64& rng) {
  switch (d) {
    case ErrorDist::Normal01: return std::normal_distribution<double>(0.0, 1.0)(rng);
    case ErrorDist::StudentT5: return std::student_t_distribution<double>(5.0)(rng);
    case ErrorDist::ChiSq4: return std::chi_squared_distribution<double>(4.0)(rng);
    case ErrorDist::Cauchy01: return std::cauchy_distribution<double>(0.0, 1.0)(rng);
  }
  return 0.0;
}

}  // namespace detail

// y_it = x_it' beta + alpha_i + eps_it with x_it1 ~ chi2(2) - 2, the other
// regressors N(0, 1), alpha_i = sum_t x_it' gamma / sqrt(T) + eta_i and
// eta_i ~ U(0, 12).
inline PanelData gen_panel(const DgpConfig& cfg) {
  const auto k = cfg.beta.size();
  if (k < 1 || cfg.gamma.size() != k) throw ConfigError("DGP beta and gamma must have the same length >= 1");
  const auto n = static_cast<Eigen::Index>(cfg.n_units);
  const auto t = static_cast<Eigen::Index>(cfg.n_periods);
  std::mt19937_64 rng(cfg.seed);
  std::chi_squared_distribution<double> chi2(2.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> eta(0.0, 12.0);

  Matrix x(n * t, k);
  Vector y(n * t);
  for (Eigen::Index r = 0; r < n * t; ++r)
    for (Eigen::Index q = 0; q < k; ++q) x(r, q) = q == 0 ? chi2(rng) - 2.0 : normal(rng);
  const double root_t = std::sqrt(static_cast<double>(t));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double alpha = (x.middleRows(i * t, t) * cfg.gamma).sum() / root_t + eta(rng);
    for (Eigen::Index s = 0; s < t; ++s) {
      const Eigen::Index r = i * t + s;
      const double draw = detail::draw_error(cfg.error_dist, rng);
      const double e = cfg.noiseless ? 0.0 : draw;
      y(r) = x.row(r).dot(cfg.beta) + alpha + e;
    }
  }
  return PanelData(cfg.n_units, cfg.n_periods, std::move(y), std::move(x));
}

enum class ContaminationKind { RandomVertical, RandomLeverage, ConcentratedVertical, ConcentratedLeverage };

inline constexpr ContaminationKind kAllContaminationKinds[] = {
    ContaminationKind::RandomVertical, ContaminationKind::RandomLeverage,
    ContaminationKind::ConcentratedVertical, ContaminationKind::ConcentratedLeverage};

inline std::string_view to_string(ContaminationKind k) {
  switch (k) {
    case ContaminationKind::RandomVertical: return "random_vertical";
    case ContaminationKind::RandomLeverage: return "random_leverage";
    case ContaminationKind::ConcentratedVertical: return "concentrated_vertical";
    case ContaminationKind::ConcentratedLeverage: return "concentrated_leverage";
  }
  return "?";
}

inline std::optional<ContaminationKind> parse_contamination(std::string_view s) {
  for (auto k : kAllContaminationKinds)
    if (to_string(k) == s) return k;
  return std::nullopt;
}

inline bool is_concentrated(ContaminationKind k) {
  return k == ContaminationKind::ConcentratedVertical || k == ContaminationKind::ConcentratedLeverage;
}

inline bool is_leverage(ContaminationKind k) {
  return k == ContaminationKind::RandomLeverage || k == ContaminationKind::ConcentratedLeverage;
}

// Shape of one contaminated block under the concentrated schemes.
enum class BlockPolicy {
  HalfUnit,   // ceil(T / 2) consecutive periods of a unit
  WholeUnit,  // all T periods of a unit
};

inline std::string_view to_string(BlockPolicy b) {
  return b == BlockPolicy::HalfUnit ? "half_unit" : "whole_unit";
}

inline std::optional<BlockPolicy> parse_block_policy(std::string_view s) {
  if (s == "half_unit") return BlockPolicy::HalfUnit;
  if (s == "whole_unit") return BlockPolicy::WholeUnit;
  return std::nullopt;
}

struct ContaminationScheme {
  ContaminationKind kind = ContaminationKind::RandomVertical;
  std::size_t m = 0;
  std::uint64_t seed = 0;
  BlockPolicy block = BlockPolicy::HalfUnit;
};

inline std::size_t block_length(std::size_t n_periods, BlockPolicy policy = BlockPolicy::HalfUnit) {
  return policy == BlockPolicy::WholeUnit ? n_periods : (n_periods + 1) / 2;
}

// Random schemes replace m distinct cells with y ~ U(20, 80). Concentrated
// schemes pick m / L distinct units, L = block_length(T), and replace a
// random window of L consecutive periods in each with y ~ U(79, 80).
// Leverage variants also redraw every regressor of the touched cells from
// N(8, sd = 2).
inline PanelData contaminate(const PanelData& panel, const ContaminationScheme& scheme) {
  if (scheme.m == 0) return panel;
  const auto n = panel.n_units();
  const auto t = panel.n_periods();
  if (scheme.m > panel.n_obs())
    throw BlockPolicyError("cannot contaminate " + std::to_string(scheme.m) + " of " +
                           std::to_string(panel.n_obs()) + " cells");

  std::mt19937_64 rng(scheme.seed);
  std::uniform_real_distribution<double> random_y(20.0, 80.0);
  std::uniform_real_distribution<double> block_y(79.0, 80.0);
  std::normal_distribution<double> lever(8.0, 2.0);

  std::vector<Eigen::Index> cells;
  if (is_concentrated(scheme.kind)) {
    const auto len = block_length(t, scheme.block);
    if (scheme.m % len != 0) {
      const auto lower = scheme.m / len * len;
      const auto nearest = (scheme.m - lower) * 2 >= len ? lower + len : lower;
      throw BlockPolicyError("m = " + std::to_string(scheme.m) + " is not a whole number of " +
                             std::to_string(len) + "-period blocks; nearest valid m = " +
                             std::to_string(nearest));
    }
    const auto units = scheme.m / len;
    if (units > n)
      throw BlockPolicyError("m = " + std::to_string(scheme.m) + " needs " + std::to_string(units) +
                             " units but the panel has " + std::to_string(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::uniform_int_distribution<std::size_t> start(0, t - len);
    for (std::size_t u = 0; u < units; ++u) {
      std::uniform_int_distribution<std::size_t> pick(u, n - 1);
      std::swap(order[u], order[pick(rng)]);
      const auto first = start(rng);
      for (std::size_t s = first; s < first + len; ++s) cells.push_back(panel.row(order[u], s));
    }
  } else {
    std::vector<Eigen::Index> order(panel.n_obs());
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    for (std::size_t j = 0; j < scheme.m; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, order.size() - 1);
      std::swap(order[j], order[pick(rng)]);
      cells.push_back(order[j]);
    }
  }

  Vector y = panel.y();
  Matrix x = panel.x();
  const bool concentrated = is_concentrated(scheme.kind);
  for (auto r : cells) {
    y(r) = concentrated ? block_y(rng) : random_y(rng);
    if (is_leverage(scheme.kind))
      for (Eigen::Index q = 0; q < x.cols(); ++q) x(r, q) = lever(rng);
  }
  return panel.with_data(std::move(y), std::move(x));
}

struct EstimatorSummary {
  EstimatorKind estimator = EstimatorKind::LS;
  double mse = 0.0;
  std::vector<double> se_samples;  // successful replications, in replication order
  std::optional<double> rmse;
  std::vector<double> rmse_samples;
  std::vector<std::size_t> failed_replications;
  std::string first_failure;
};

struct SimulationReport {
  DgpConfig dgp;
  std::optional<ContaminationScheme> scheme;
  std::size_t replications = 0;
  std::optional<std::size_t> n_test;
  std::vector<EstimatorSummary> estimators;
  bool degraded = false;  // some estimator failed in more than 5% of replications

  const EstimatorSummary& at(EstimatorKind e) const {
    for (const auto& s : estimators)
      if (s.estimator == e) return s;
    throw std::out_of_range("estimator not in report: " + std::string(to_string(e)));
  }
};

struct McOptions {
  std::size_t threads = 1;  // 0: hardware concurrency
  FitOptions fit;           // seed is overridden per replication
};

namespace detail {

template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t s = 0; s < count; ++s) fn(s);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (std::size_t s = next++; s < count; s = next++) fn(s);
    });
}

struct Outcome {
  std::optional<double> se;
  std::optional<double> rmse;
  std::string error;
};

}  // namespace detail

inline SimulationReport run_study(const DgpConfig& dgp, const std::optional<ContaminationScheme>& scheme,
                                  const std::vector<EstimatorKind>& estimators, std::size_t replications,
                                  std::uint64_t master_seed, std::optional<std::size_t> n_test,
                                  const McOptions& opt = {}) {
  if (estimators.empty()) throw ConfigError("no estimators requested");
  if (replications < 1) throw ConfigError("replications must be >= 1");
  if (n_test && *n_test < 1) throw ConfigError("n_test must be >= 1");
  const auto e_count = estimators.size();
  std::vector<detail::Outcome> outcomes(replications * e_count);

  detail::parallel_for(replications, opt.threads, [&](std::size_t s) {
    const auto rep_seed = derive_seed(master_seed, s);
    DgpConfig cfg = dgp;
    cfg.seed = derive_seed(rep_seed, 0, 1);
    PanelData train = gen_panel(cfg);
    if (scheme && scheme->m > 0) {
      ContaminationScheme sc = *scheme;
      sc.seed = derive_seed(rep_seed, 0, 2);
      train = contaminate(train, sc);
    }
    std::optional<PanelData> test;
    if (n_test) {
      DgpConfig tc = dgp;
      tc.n_units = *n_test;
      tc.seed = derive_seed(rep_seed, 0, 3);
      test = gen_panel(tc);
    }
    const CenteredPanel centered = within_transform(train);
    FitOptions fo = opt.fit;
    fo.seed = derive_seed(rep_seed, 0, 4);
    for (std::size_t e = 0; e < e_count; ++e) {
      auto& out = outcomes[s * e_count + e];
      try {
        const FitResult fit = fit_estimator(centered, estimators[e], fo);
        if (!fit.beta.allFinite()) throw EstimationError("non-finite coefficients");
        out.se = (fit.beta - dgp.beta).squaredNorm();
        if (test) out.rmse = prediction_rmse(*test, predict(*test, fit.beta));
      } catch (const Error& err) {
        out.error = err.what();
      }
    }
  });

  SimulationReport report;
  report.dgp = dgp;
  report.scheme = scheme;
  report.replications = replications;
  report.n_test = n_test;
  for (std::size_t e = 0; e < e_count; ++e) {
    EstimatorSummary sum;
    sum.estimator = estimators[e];
    for (std::size_t s = 0; s < replications; ++s) {
      const auto& out = outcomes[s * e_count + e];
      if (!out.se) {
        sum.failed_replications.push_back(s);
        if (sum.first_failure.empty()) sum.first_failure = out.error;
        continue;
      }
      sum.se_samples.push_back(*out.se);
      if (out.rmse) sum.rmse_samples.push_back(*out.rmse);
    }
    if (!sum.se_samples.empty())
      sum.mse = std::accumulate(sum.se_samples.begin(), sum.se_samples.end(), 0.0) /
                static_cast<double>(sum.se_samples.size());
    else
      sum.mse = std::numeric_limits<double>::quiet_NaN();
    if (n_test && !sum.rmse_samples.empty())
      sum.rmse = std::accumulate(sum.rmse_samples.begin(), sum.rmse_samples.end(), 0.0) /
                 static_cast<double>(sum.rmse_samples.size());
    if (static_cast<double>(sum.failed_replications.size()) > 0.05 * static_cast<double>(replications))
      report.degraded = true;
    report.estimators.push_back(std::move(sum));
  }
  return report;
}

// MSE = mean over replications of ||beta_hat - beta||^2.
inline SimulationReport run_mc(const DgpConfig& dgp, const std::optional<ContaminationScheme>& scheme,
                               const std::vector<EstimatorKind>& estimators, std::size_t replications,
                               std::uint64_t master_seed, const McOptions& opt = {}) {
  return run_study(dgp, scheme, estimators, replications, master_seed, std::nullopt, opt);
}

// Adds the prediction RMSE on a clean test panel of n_test fresh units per
// replication: RMSE = mean_s sqrt(sum (y - y_hat)^2 / (n_test * T)).
inline SimulationReport rmse_prediction_study(const DgpConfig& dgp,
                                              const std::optional<ContaminationScheme>& scheme,
                                              const std::vector<EstimatorKind>& estimators,
                                              std::size_t replications, std::size_t n_test,
                                              std::uint64_t master_seed, const McOptions& opt = {}) {
  return run_study(dgp, scheme, estimators, replications, master_seed, n_test, opt);
}

struct ErrorDistCell {
  ErrorDist dist;
  std::size_t n_units;
  std::size_t n_periods;
  SimulationReport report;
};

struct PanelSize {
  std::size_t n_units;
  std::size_t n_periods;

  bool operator==(const PanelSize&) const = default;
};

// Squared-error samples under each error law for each (N, T) pair.
inline std::vector<ErrorDistCell> error_dist_study(const std::vector<PanelSize>& pairs,
                                                   const std::vector<EstimatorKind>& estimators,
                                                   std::size_t replications, std::uint64_t master_seed,
                                                   const McOptions& opt = {}, const DgpConfig& base = {}) {
  if (pairs.empty()) throw ConfigError("error_dist_study: no (N, T) pairs");
  std::vector<ErrorDistCell> cells;
  for (auto dist : kAllErrorDists) {
    for (const auto& p : pairs) {
      DgpConfig dgp = base;
      dgp.n_units = p.n_units;
      dgp.n_periods = p.n_periods;
      dgp.error_dist = dist;
      const auto cell_seed = derive_seed(master_seed, static_cast<std::uint64_t>(dist) * 1000003ULL +
                                                          p.n_units * 1009ULL + p.n_periods, 7);
      cells.push_back({dist, p.n_units, p.n_periods,
                       run_mc(dgp, std::nullopt, estimators, replications, cell_seed, opt)});
    }
  }
  return cells;
}

struct ContaminationCell {
  std::size_t n_units;
  std::size_t n_periods;
  ContaminationKind kind;
  std::size_t m;
  SimulationReport report;
};

// MSE and prediction RMSE for every panel size x scheme x outlier count.
// Cells of one panel size share their clean replications.
inline std::vector<ContaminationCell> contamination_study(
    const std::vector<PanelSize>& panels, const std::vector<ContaminationKind>& kinds,
    const std::vector<std::size_t>& counts, BlockPolicy block, const DgpConfig& base,
    const std::vector<EstimatorKind>& estimators, std::size_t replications, std::size_t n_test,
    std::uint64_t master_seed, const McOptions& opt = {}) {
  std::vector<ContaminationCell> cells;
  for (std::size_t p = 0; p < panels.size(); ++p) {
    DgpConfig dgp = base;
    dgp.n_units = panels[p].n_units;
    dgp.n_periods = panels[p].n_periods;
    const auto panel_seed = derive_seed(master_seed, p, 17);
    for (auto kind : kinds)
      for (auto m : counts) {
        const ContaminationScheme scheme{kind, m, 0, block};
        cells.push_back({dgp.n_units, dgp.n_periods, kind, m,
                         rmse_prediction_study(dgp, scheme, estimators, replications, n_test, panel_seed, opt)});
      }
  }
  return cells;
}

struct CurvePoint {
  std::string sweep;  // "N" or "T"
  std::size_t n_units;
  std::size_t n_periods;
  SimulationReport report;
};

// Clean-data MSE as N grows at fixed T and as T grows at fixed N.
inline std::vector<CurvePoint> consistency_study(const std::vector<std::size_t>& n_values,
                                                 std::size_t fixed_t,
                                                 const std::vector<std::size_t>& t_values,
                                                 std::size_t fixed_n,
                                                 const std::vector<EstimatorKind>& estimators,
                                                 std::size_t replications, std::uint64_t master_seed,
                                                 const McOptions& opt = {}, const DgpConfig& base = {}) {
  std::vector<CurvePoint> out;
  auto run = [&](const std::string& sweep, std::size_t n, std::size_t t) {
    DgpConfig dgp = base;
    dgp.n_units = n;
    dgp.n_periods = t;
    const auto seed = derive_seed(master_seed, n * 1009ULL + t, sweep == "N" ? 11 : 13);
    out.push_back({sweep, n, t, run_mc(dgp, std::nullopt, estimators, replications, seed, opt)});
  };
  for (auto n : n_values) run("N", n, fixed_t);
  for (auto t : t_values) run("T", fixed_n, t);
  return out;
}

struct HoldoutReport {
  std::size_t n_test = 0;
  std::size_t replications = 0;
  std::vector<EstimatorSummary> estimators;  // rmse / rmse_samples populated
};

// Repeated random unit splits of an observed panel: fit on N - n_test units,
// predict the held-out units with OwnMeans, record the RMSE.
inline HoldoutReport holdout_study(const PanelData& panel, const std::vector<EstimatorKind>& estimators,
                                   std::size_t n_test, std::size_t replications, std::uint64_t master_seed,
                                   const FitOptions& fit_opt = {}) {
  const auto n = panel.n_units();
  const auto t = static_cast<Eigen::Index>(panel.n_periods());
  if (n_test < 1 || n_test >= n) throw ConfigError("n_test must be in [1, N - 1]");
  HoldoutReport rep;
  rep.n_test = n_test;
  rep.replications = replications;
  for (auto e : estimators) {
    EstimatorSummary sum;
    sum.estimator = e;
    rep.estimators.push_back(sum);
  }

  auto subset = [&](const std::vector<std::size_t>& units) {
    const auto m = static_cast<Eigen::Index>(units.size());
    Vector y(m * t);
    Matrix x(m * t, panel.x().cols());
    std::vector<std::string> labels;
    for (Eigen::Index u = 0; u < m; ++u) {
      const auto src = panel.row(units[static_cast<std::size_t>(u)], 0);
      y.segment(u * t, t) = panel.y().segment(src, t);
      x.middleRows(u * t, t) = panel.x().middleRows(src, t);
      labels.push_back(panel.unit_labels()[units[static_cast<std::size_t>(u)]]);
    }
    return PanelData(units.size(), panel.n_periods(), std::move(y), std::move(x), std::move(labels),
                     panel.period_labels());
  };

  for (std::size_t s = 0; s < replications; ++s) {
    const auto rep_seed = derive_seed(master_seed, s);
    std::mt19937_64 rng(derive_seed(rep_seed, 0, 5));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t j = 0; j < n_test; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, n - 1);
      std::swap(order[j], order[pick(rng)]);
    }
    std::vector<std::size_t> test_units(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train_units(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    std::sort(test_units.begin(), test_units.end());
    std::sort(train_units.begin(), train_units.end());
    const PanelData train = subset(train_units);
    const PanelData test = subset(test_units);
    const CenteredPanel centered = within_transform(train);
    FitOptions fo = fit_opt;
    fo.seed = derive_seed(rep_seed, 0, 4);
    for (auto& sum : rep.estimators) {
      try {
        const FitResult fit = fit_estimator(centered, sum.estimator, fo);
        sum.rmse_samples.push_back(prediction_rmse(test, predict(test, fit.beta)));
      } catch (const Error& err) {
        sum.failed_replications.push_back(s);
        if (sum.first_failure.empty()) sum.first_failure = err.what();
      }
    }
  }
  for (auto& sum : rep.estimators)
    if (!sum.rmse_samples.empty())
      sum.rmse = std::accumulate(sum.rmse_samples.begin(), sum.rmse_samples.end(), 0.0) /
                 static_cast<double>(sum.rmse_samples.size());
  return rep;
}

}  // namespace robpanel
