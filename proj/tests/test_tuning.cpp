#include "robpanel/m_estimator.hpp"
#include "robpanel/simulation.hpp"
#include "robpanel/tuning.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace robpanel;

namespace {

std::vector<double> normal_sample(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = z(rng);
  return v;
}

// Residuals stored as a K = 1 centered panel with x = 1, beta = 0.
CenteredPanel residual_panel(const std::vector<double>& e) {
  CenteredPanel c;
  c.n_units = e.size() / 2;
  c.n_periods = 2;
  c.y = Eigen::Map<const Vector>(e.data(), static_cast<Eigen::Index>(e.size()));
  c.x = Matrix::Ones(static_cast<Eigen::Index>(e.size()), 1);
  return c;
}

PanelData contaminated_synthetic(std::uint64_t seed) {
  DgpConfig cfg;
  cfg.seed = seed;
  const auto clean = gen_panel(cfg);
  return contaminate(clean, ContaminationScheme{ContaminationKind::RandomVertical, 24, seed + 1});
}

}  // namespace

TEST(EfficiencyFactor, LinearRegionClosedForm) {
  std::vector<double> e;
  for (int j = 0; j < 40; ++j) e.push_back(j % 2 ? 0.5 : -0.5);
  const auto tau = efficiency_factor(e, LossSpec(LossFamily::Huber, 1.0));
  EXPECT_TRUE(tau.defined);
  EXPECT_NEAR(tau.value, 4.0, 1e-12);
}

TEST(EfficiencyFactor, HuberWithoutTrimmingIsNOverSumSquares) {
  const auto e = normal_sample(300, 1);
  double ss = 0.0;
  for (double x : e) ss += x * x;
  const auto tau = efficiency_factor(e, LossSpec(LossFamily::Huber, 100.0));
  EXPECT_NEAR(tau.value, 300.0 / ss, 1e-12);
}

TEST(EfficiencyFactor, TotalRejectionIsUndefined) {
  const std::vector<double> e{5, -6, 7, 8};
  const auto tau = efficiency_factor(e, LossSpec(LossFamily::Tukey, 2.0));
  EXPECT_FALSE(tau.defined);
  EXPECT_EQ(tau.value, 0.0);
}

TEST(EfficiencyFactor, HuberNominalNinetyPercent) {
  const auto tau = efficiency_factor(normal_sample(10000, 2), LossSpec(LossFamily::Huber, 1.345));
  EXPECT_GE(tau.value, 0.85);
  EXPECT_LE(tau.value, 1.00);
}

TEST(EfficiencyFactor, InvariantToPsiRescaling) {
  const auto e = normal_sample(500, 3);
  for (const auto& s : {LossSpec(LossFamily::Huber, 1.1), LossSpec(LossFamily::Tukey, 3.3), LossSpec(LossFamily::Esl, 2.0)}) {
    const double base = efficiency_factor(e, s).value;
    for (double k : {1e-3, 0.7, 6.0 / (s.c * s.c), 2.0 / s.c, 123.0}) {
      double sd = 0.0, s2 = 0.0;
      for (double u : e) {
        sd += k * psi_prime(s, u);
        s2 += (k * psi(s, u)) * (k * psi(s, u));
      }
      const double scaled = sd * sd / (static_cast<double>(e.size()) * s2);
      EXPECT_NEAR(scaled, base, 1e-12 * base);
    }
  }
}

TEST(Grids, DefaultRanges) {
  const auto h = default_huber_grid();
  ASSERT_EQ(h.size(), 60u);
  EXPECT_DOUBLE_EQ(h.front(), 0.05);
  EXPECT_NEAR(h.back(), 3.0, 1e-12);
  const auto t = default_tukey_grid();
  ASSERT_EQ(t.size(), 46u);
  EXPECT_DOUBLE_EQ(t.front(), 1.0);
  EXPECT_NEAR(t.back(), 10.0, 1e-12);
  const auto g = default_esl_grid(2.0);
  ASSERT_EQ(g.size(), 50u);
  EXPECT_NEAR(g.front(), 0.4, 1e-12);
  EXPECT_NEAR(g.back(), 400.0, 1e-9);
  for (std::size_t j = 1; j < g.size(); ++j) EXPECT_GT(g[j], g[j - 1]);
}

TEST(SelectCGrid, CleanResidualsFavourLargeHuberConstant) {
  const auto e = normal_sample(2000, 4);
  const auto panel = residual_panel(e);
  const auto curve = select_c_grid(panel, LossFamily::Huber, Vector::Zero(1), 1.0, default_huber_grid());
  EXPECT_GE(curve.c_star, 2.0);
  // direct oracle over the grid
  double best = -1.0, arg = 0.0;
  for (double c : default_huber_grid()) {
    const double v = efficiency_factor(e, LossSpec(LossFamily::Huber, c)).value;
    if (v > best) {
      best = v;
      arg = c;
    }
  }
  EXPECT_EQ(curve.c_star, arg);
  EXPECT_EQ(curve.tau_star, best);
}

TEST(SelectCGrid, PlantedOutliersAreRejectedByTukey) {
  auto e = normal_sample(1000, 5);
  for (std::size_t j = 0; j < 100; ++j) e[j * 10] = (j % 2 ? 8.0 : -8.0);
  const auto panel = residual_panel(e);
  const auto curve = select_c_grid(panel, LossFamily::Tukey, Vector::Zero(1), 1.0, default_tukey_grid());
  EXPECT_LE(curve.c_star, 8.0);
  for (std::size_t j = 0; j < 100; ++j) EXPECT_EQ(weight(LossSpec(LossFamily::Tukey, curve.c_star), e[j * 10]), 0.0);
}

TEST(SelectCGrid, SingletonGridAndUndefinedGrid) {
  const auto e = normal_sample(100, 6);
  const auto panel = residual_panel(e);
  const std::vector<double> one{2.2};
  EXPECT_EQ(select_c_grid(panel, LossFamily::Tukey, Vector::Zero(1), 1.0, one).c_star, 2.2);
  const std::vector<double> far(100, 50.0);
  const std::vector<double> tiny{0.001, 0.002};
  EXPECT_THROW(select_c_grid(residual_panel(far), LossFamily::Tukey, Vector::Zero(1), 1.0, tiny), NoValidTuning);
  EXPECT_THROW(select_c_grid(panel, LossFamily::Huber, Vector::Zero(1), 0.0, one), ZeroScale);
}

TEST(SelectCGrid, TiesGoToSmallestConstant) {
  // all |e| <= 0.5: every Huber c >= 0.5 gives the same tau
  std::vector<double> e;
  for (int j = 0; j < 20; ++j) e.push_back(j % 2 ? 0.5 : -0.25);
  const std::vector<double> grid{0.5, 1.0, 2.0};
  const auto curve = select_c_from_residuals(e, LossFamily::Huber, grid);
  EXPECT_EQ(curve.c_star, 0.5);
}

TEST(PseudoOutliers, Examples) {
  const std::vector<double> small(10, 0.1);
  EXPECT_TRUE(pseudo_outlier_set(small, 1.0).empty());
  const std::vector<double> one{0, 0, 0, 10};
  EXPECT_EQ(pseudo_outlier_set(one, 1.0), (std::vector<std::size_t>{3}));
  const std::vector<double> edge{2.5, -2.5, 2.4999};
  EXPECT_EQ(pseudo_outlier_set(edge, 1.0).size(), 2u);
  EXPECT_THROW(pseudo_outlier_set(one, 0.0), ZeroScale);
}

TEST(PseudoOutliers, NormalTailRate) {
  const auto e = normal_sample(10000, 7);
  const auto m = pseudo_outlier_set(e, mad_scale(e).value).size();
  EXPECT_GE(m / 10000.0, 0.008);
  EXPECT_LE(m / 10000.0, 0.018);
}

TEST(Xi, BoundaryCases) {
  const std::vector<double> zeros(10, 0.0);
  EXPECT_EQ(xi(1.0, zeros, 0, 10), 0.0);
  EXPECT_FALSE(xi_admissible(xi(1.0, zeros, 0, 10)));
  const std::vector<double> half(5, 0.0);
  EXPECT_EQ(xi(1.0, half, 5, 10), 1.0);
  EXPECT_TRUE(xi_admissible(xi(1.0, half, 5, 10)));
  const std::vector<double> ones(4, 1.0);
  EXPECT_NEAR(xi(1.0, ones, 0, 4), 2.0 * (1.0 - std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(xi(1.0, ones, 0, 4), 1.2642, 1e-4);
  EXPECT_FALSE(xi_admissible(xi(1.0, ones, 0, 4)));
  EXPECT_THROW(xi(1.0, ones, 1, 4), std::invalid_argument);
}

TEST(Xi, MonotoneInOutlierCountAndBoundedBelow) {
  const auto good = normal_sample(50, 8);
  double prev = -1.0;
  for (std::size_t m = 0; m <= 30; ++m) {
    const double v = xi(0.8, good, m, 50 + m);
    EXPECT_GE(v, 2.0 * m / (50.0 + m));
    // holding the retained residuals fixed while adding outliers
    const double w = xi(0.8, good, m + 1, 51 + m);
    EXPECT_GE(w, v - 1e-15);
    prev = v;
  }
  (void)prev;
}

TEST(EslCov, ZeroResidualsGiveZeroCovariance) {
  const std::vector<double> e(12, 0.0);
  auto panel = residual_panel(e);
  panel.x = Vector::LinSpaced(12, -1.0, 1.0);
  const double c = 2.0;
  const auto cov = esl_cov(panel, Vector::Zero(1), c);
  ASSERT_TRUE(cov.defined);
  EXPECT_NEAR(cov.info(0, 0), (2.0 / c) * (-1.0) * panel.x.squaredNorm() / 12.0, 1e-14);
  EXPECT_EQ(cov.sigma(0, 0), 0.0);
  EXPECT_EQ(cov.v(0, 0), 0.0);
}

TEST(EslCov, RootOfCurvatureIsFlagged) {
  // e^2 / c = 1/2 everywhere: exp(-q)(2q - 1) = 0
  const double c = 2.0;
  std::vector<double> e;
  for (int j = 0; j < 10; ++j) e.push_back(j % 2 ? 1.0 : -1.0);
  auto panel = residual_panel(e);
  panel.x = Vector::LinSpaced(10, 1.0, 2.0);
  const auto cov = esl_cov(panel, Vector::Zero(1), c);
  EXPECT_FALSE(cov.defined);
  EXPECT_TRUE(std::isnan(cov.v(0, 0)));
}

TEST(EslCov, MatchesElementWiseOracle) {
  const auto panel = within_transform(contaminated_synthetic(31));
  const Vector beta0 = testutil::beta_true() + Vector::Constant(2, 0.05);
  for (double c : {0.5, 2.0, 11.0}) {
    const auto cov = esl_cov(panel, beta0, c);
    ASSERT_TRUE(cov.defined);
    const auto o = testutil::esl_cov_oracle(panel, beta0, c);
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        EXPECT_NEAR(cov.info(a, b), o.info[a][b], 1e-10 * std::max(1.0, std::abs(o.info[a][b])));
        EXPECT_NEAR(cov.sigma(a, b), o.sigma[a][b], 1e-10 * std::max(1.0, std::abs(o.sigma[a][b])));
        EXPECT_NEAR(cov.v(a, b), o.v[a][b], 1e-10 * std::max(1.0, std::abs(o.v[a][b])));
      }
  }
}

TEST(EslSelectC, AllZeroResidualsHaveNoAdmissibleConstant) {
  const std::vector<double> e(20, 0.0);
  const auto panel = residual_panel(e);
  const std::vector<double> grid{0.1, 1.0, 10.0};
  try {
    esl_select_c(panel, Vector::Zero(1), grid);
    FAIL() << "expected NoValidTuning";
  } catch (const NoValidTuning& err) {
    EXPECT_NE(std::string(err.what()).find("xi range"), std::string::npos);
  }
}

TEST(EslSelectC, SingleAdmissibleConstantIsChosen) {
  const auto panel = within_transform(contaminated_synthetic(32));
  const Vector beta0 = high_breakdown_init(panel, 300, 1);
  const auto full = esl_select_c(panel, beta0);
  std::vector<double> grid;
  std::size_t admissible = 0;
  double only = 0.0;
  for (std::size_t j = 0; j < full.grid.size(); ++j) {
    const bool ok = xi_admissible(full.xi_values[j]);
    if (ok && admissible == 0) {
      grid.push_back(full.grid[j]);
      only = full.grid[j];
      ++admissible;
    } else if (!ok) {
      grid.push_back(full.grid[j]);
    }
  }
  ASSERT_EQ(admissible, 1u);
  EXPECT_EQ(esl_select_c(panel, beta0, grid).c_selected, only);
}

TEST(EslSelectC, MatchesExhaustiveScan) {
  const auto panel = within_transform(contaminated_synthetic(33));
  const Vector beta0 = high_breakdown_init(panel, 500, 2);
  const auto st = esl_select_c(panel, beta0);
  const auto scan = testutil::esl_scan_oracle(panel, beta0);
  EXPECT_DOUBLE_EQ(st.sigma_mad, scan.sigma_mad);
  EXPECT_EQ(st.outlier_count(), scan.m);
  ASSERT_EQ(st.grid.size(), scan.grid.size());
  for (std::size_t j = 0; j < scan.grid.size(); ++j) {
    EXPECT_NEAR(st.grid[j], scan.grid[j], 1e-12 * scan.grid[j]);
    EXPECT_NEAR(st.xi_values[j], scan.xi[j], 1e-12);
  }
  EXPECT_NEAR(st.c_selected, scan.c_selected, 1e-12 * scan.c_selected);
}

TEST(EslSelectC, Deterministic) {
  const auto panel = within_transform(contaminated_synthetic(34));
  const Vector beta0 = high_breakdown_init(panel, 200, 3);
  const auto a = esl_select_c(panel, beta0);
  const auto b = esl_select_c(panel, beta0);
  EXPECT_EQ(a.c_selected, b.c_selected);
  ASSERT_EQ(a.det_v.size(), b.det_v.size());
  for (std::size_t j = 0; j < a.det_v.size(); ++j)
    EXPECT_TRUE(a.det_v[j] == b.det_v[j] || (std::isnan(a.det_v[j]) && std::isnan(b.det_v[j])));
  EXPECT_EQ(a.xi_values, b.xi_values);
  EXPECT_EQ(a.outlier_indices, b.outlier_indices);
}
