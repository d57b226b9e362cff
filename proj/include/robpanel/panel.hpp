#pragma once

// Balanced fixed-effects panels, the within-group transformation and the
// within-group least-squares estimator.
//
// Observations are stacked unit-major: row i * T + t holds unit i at
// period t, both for the response vector and the N*T x K regressor matrix.

#include "robpanel/error.hpp"
#include "robpanel/linalg.hpp"
#include "robpanel/losses.hpp"

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace robpanel {

class PanelData {
 public:
  PanelData(std::size_t n_units, std::size_t n_periods, Vector y, Matrix x,
            std::vector<std::string> unit_labels = {},
            std::vector<std::string> period_labels = {})
      : n_units_(n_units),
        n_periods_(n_periods),
        y_(std::move(y)),
        x_(std::move(x)),
        unit_labels_(std::move(unit_labels)),
        period_labels_(std::move(period_labels)) {
    if (unit_labels_.empty()) unit_labels_ = numbered(n_units_);
    if (period_labels_.empty()) period_labels_ = numbered(n_periods_);
    validate();
  }

  std::size_t n_units() const { return n_units_; }
  std::size_t n_periods() const { return n_periods_; }
  std::size_t n_regressors() const { return static_cast<std::size_t>(x_.cols()); }
  std::size_t n_obs() const { return n_units_ * n_periods_; }

  const Vector& y() const { return y_; }
  const Matrix& x() const { return x_; }

  Eigen::Index row(std::size_t unit, std::size_t period) const {
    return static_cast<Eigen::Index>(unit * n_periods_ + period);
  }
  double y(std::size_t unit, std::size_t period) const { return y_(row(unit, period)); }
  double x(std::size_t unit, std::size_t period, std::size_t k) const {
    return x_(row(unit, period), static_cast<Eigen::Index>(k));
  }

  const std::vector<std::string>& unit_labels() const { return unit_labels_; }
  const std::vector<std::string>& period_labels() const { return period_labels_; }

  PanelData with_y(Vector y) const {
    return PanelData(n_units_, n_periods_, std::move(y), x_, unit_labels_, period_labels_);
  }
  PanelData with_x(Matrix x) const {
    return PanelData(n_units_, n_periods_, y_, std::move(x), unit_labels_, period_labels_);
  }
  PanelData with_data(Vector y, Matrix x) const {
    return PanelData(n_units_, n_periods_, std::move(y), std::move(x), unit_labels_, period_labels_);
  }

 private:
  static std::vector<std::string> numbered(std::size_t n) {
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(std::to_string(i + 1));
    return out;
  }

  static bool distinct(const std::vector<std::string>& labels) {
    std::unordered_set<std::string_view> seen;
    for (const auto& l : labels)
      if (!seen.insert(l).second) return false;
    return true;
  }

  void validate() const {
    if (n_units_ < 1) throw DegeneratePanel("panel needs at least one unit");
    if (n_periods_ < 2)
      throw DegeneratePanel("panel needs at least two periods, got T = " + std::to_string(n_periods_));
    if (static_cast<std::size_t>(y_.size()) != n_obs() ||
        static_cast<std::size_t>(x_.rows()) != n_obs())
      throw ShapeMismatch("panel arrays do not match N * T = " + std::to_string(n_obs()));
    if (x_.cols() < 1) throw ShapeMismatch("panel needs at least one regressor");
    if (unit_labels_.size() != n_units_ || period_labels_.size() != n_periods_)
      throw ShapeMismatch("label count does not match panel dimensions");
    if (!distinct(unit_labels_)) throw DataError("unit labels are not distinct");
    if (!distinct(period_labels_)) throw DataError("period labels are not distinct");
    if (!y_.allFinite() || !x_.allFinite()) throw DataError("panel contains non-finite values");
  }

  std::size_t n_units_;
  std::size_t n_periods_;
  Vector y_;
  Matrix x_;
  std::vector<std::string> unit_labels_;
  std::vector<std::string> period_labels_;
};

// Within-group (time-demeaned) panel plus the unit means that were removed.
struct CenteredPanel {
  std::size_t n_units = 0;
  std::size_t n_periods = 0;
  Vector y;       // N*T
  Matrix x;       // N*T x K
  Vector y_mean;  // N
  Matrix x_mean;  // N x K

  std::size_t n_obs() const { return n_units * n_periods; }
  std::size_t n_regressors() const { return static_cast<std::size_t>(x.cols()); }
};

inline CenteredPanel within_transform(const PanelData& panel) {
  const auto n = panel.n_units();
  const auto t = panel.n_periods();
  if (t < 2) throw DegeneratePanel("within transform needs T >= 2");
  const auto k = static_cast<Eigen::Index>(panel.n_regressors());
  const auto ti = static_cast<Eigen::Index>(t);

  CenteredPanel out;
  out.n_units = n;
  out.n_periods = t;
  out.y.resize(panel.y().size());
  out.x.resize(panel.x().rows(), k);
  out.y_mean.resize(static_cast<Eigen::Index>(n));
  out.x_mean.resize(static_cast<Eigen::Index>(n), k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto first = panel.row(i, 0);
    const auto yb = panel.y().segment(first, ti);
    const auto xb = panel.x().middleRows(first, ti);
    const double ym = yb.mean();
    const Eigen::RowVectorXd xm = xb.colwise().mean();
    out.y_mean(static_cast<Eigen::Index>(i)) = ym;
    out.x_mean.row(static_cast<Eigen::Index>(i)) = xm;
    out.y.segment(first, ti) = yb.array() - ym;
    out.x.middleRows(first, ti) = xb.rowwise() - xm;
  }
  return out;
}

enum class EstimatorKind { LS, Huber, Tukey, ESL };

inline std::string_view to_string(EstimatorKind e) {
  switch (e) {
    case EstimatorKind::LS: return "LS";
    case EstimatorKind::Huber: return "Huber";
    case EstimatorKind::Tukey: return "Tukey";
    case EstimatorKind::ESL: return "ESL";
  }
  return "?";
}

// Accepts the display names and their lower-case forms.
inline std::optional<EstimatorKind> parse_estimator(std::string_view s) {
  if (s == "ls" || s == "LS") return EstimatorKind::LS;
  if (s == "huber" || s == "Huber") return EstimatorKind::Huber;
  if (s == "tukey" || s == "Tukey") return EstimatorKind::Tukey;
  if (s == "esl" || s == "ESL") return EstimatorKind::ESL;
  return std::nullopt;
}

struct FitResult {
  EstimatorKind estimator = EstimatorKind::LS;
  Vector beta;
  std::optional<Vector> std_errors;
  double sigma_hat = 0.0;
  // Reported tuning constant. For ESL this is on the raw squared-residual
  // scale; `loss` always holds the constant applied to r / sigma_hat.
  std::optional<double> c_selected;
  std::optional<LossSpec> loss;
  std::optional<Vector> weights;  // N*T, unit-major
  int iterations = 0;
  int outer_iterations = 1;
  bool converged = true;
  // Sum of rho(r / sigma_hat) after each IRLS update.
  std::vector<double> objective_trace;
};

inline Matrix cross_product(const Matrix& x) { return x.transpose() * x; }

// Within-group LS on an already centered panel.
inline FitResult within_ls(const CenteredPanel& centered) {
  const auto solved = linalg::weighted_least_squares(centered.x, centered.y);
  if (!solved) {
    throw SingularDesign("centered cross-product is rank deficient; null direction " +
                         linalg::format_vector(linalg::null_direction(centered.x)));
  }
  const auto nt = static_cast<double>(centered.n_obs());
  const double df = nt - static_cast<double>(centered.n_units) -
                    static_cast<double>(centered.n_regressors());
  if (df <= 0.0) throw DegeneratePanel("within LS has no residual degrees of freedom (NT - N - K <= 0)");

  FitResult fit;
  fit.estimator = EstimatorKind::LS;
  fit.beta = *solved;
  const Vector resid = centered.y - centered.x * fit.beta;
  fit.sigma_hat = std::sqrt(resid.squaredNorm() / df);
  const Matrix cov = fit.sigma_hat * fit.sigma_hat * cross_product(centered.x).inverse();
  fit.std_errors = cov.diagonal().cwiseSqrt();
  fit.iterations = 0;
  fit.converged = true;
  return fit;
}

inline FitResult within_ls(const PanelData& panel) { return within_ls(within_transform(panel)); }

// alpha_i = ybar_i - xbar_i' beta.
inline Vector fixed_effects(const PanelData& panel, const Vector& beta) {
  if (static_cast<std::size_t>(beta.size()) != panel.n_regressors())
    throw ShapeMismatch("beta length does not match the number of regressors");
  const auto n = static_cast<Eigen::Index>(panel.n_units());
  const auto t = static_cast<Eigen::Index>(panel.n_periods());
  Vector alpha(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto first = i * t;
    const double ym = panel.y().segment(first, t).mean();
    const Eigen::RowVectorXd xm = panel.x().middleRows(first, t).colwise().mean();
    alpha(i) = ym - xm.dot(beta);
  }
  return alpha;
}

enum class AlphaPolicy {
  // Each predicted unit's effect comes from its own sample means.
  OwnMeans,
};

// Fitted values y_hat(i, t) = x_it' beta + alpha_i, returned as an N x T matrix.
inline Matrix predict(const PanelData& test_panel, const Vector& beta,
                      AlphaPolicy policy = AlphaPolicy::OwnMeans) {
  (void)policy;
  const Vector alpha = fixed_effects(test_panel, beta);
  const auto n = static_cast<Eigen::Index>(test_panel.n_units());
  const auto t = static_cast<Eigen::Index>(test_panel.n_periods());
  const Vector lin = test_panel.x() * beta;
  Matrix out(n, t);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index s = 0; s < t; ++s) out(i, s) = lin(i * t + s) + alpha(i);
  return out;
}

// sqrt(sum (y - y_hat)^2 / (N * T)) for one panel.
inline double prediction_rmse(const PanelData& panel, const Matrix& fitted) {
  const auto n = static_cast<Eigen::Index>(panel.n_units());
  const auto t = static_cast<Eigen::Index>(panel.n_periods());
  if (fitted.rows() != n || fitted.cols() != t) throw ShapeMismatch("prediction shape mismatch");
  double ss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index s = 0; s < t; ++s) {
      const double d = panel.y()(i * t + s) - fitted(i, s);
      ss += d * d;
    }
  return std::sqrt(ss / static_cast<double>(n * t));
}

}  // namespace robpanel
