#include "kcmc/divergence.hpp"
#include "kcmc/oracles.hpp"
#include "kcmc/selfcheck.hpp"

#include <gtest/gtest.h>

using namespace kcmc;

class EachKind : public ::testing::TestWithParam<FKind> {};

INSTANTIATE_TEST_SUITE_P(Catalog, EachKind, ::testing::ValuesIn(kAllFKinds),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST_P(EachKind, VanishesAtOne) { EXPECT_LE(std::abs(f_value(GetParam(), 1.0)), 1e-12); }

TEST_P(EachKind, MidpointConvexOnGrid) {
  const FKind k = GetParam();
  for (double a = 0.05; a < 6.0; a += 0.37)
    for (double b = a + 0.1; b < 8.0; b += 0.53)
      EXPECT_LE(f_value(k, 0.5 * (a + b)), 0.5 * (f_value(k, a) + f_value(k, b)) + 1e-12);
}

TEST_P(EachKind, ConjugateMatchesBruteForceSup) {
  const FKind k = GetParam();
  const auto conj = monotone_conjugate(k);
  for (double v : detail::conjugate_test_grid(k))
    EXPECT_NEAR(conj.value(v), oracle::conjugate_on_grid(k, v), 1e-3) << "v=" << v;
}

TEST_P(EachKind, YoungFenchelInequality) {
  const FKind k = GetParam();
  const auto conj = monotone_conjugate(k);
  for (double u = 0.0; u <= 12.0; u += 0.1)
    for (double v = -6.0; v <= 3.0; v += 0.05) {
      const double lhs = f_value(k, u) + conj.value(v);
      if (std::isfinite(lhs)) {
        EXPECT_GE(lhs - u * v, -1e-9);
      }
    }
}

TEST_P(EachKind, FlatLevelIsValueAtZeroWeight) {
  const FKind k = GetParam();
  const auto conj = monotone_conjugate(k);
  if (!std::isfinite(conj.flat_value())) {
    EXPECT_TRUE(std::isinf(f_value(k, 0.0)));
    return;
  }
  EXPECT_NEAR(conj.flat_value(), -f_value(k, 0.0), 1e-15);
  if (std::isfinite(conj.flat_point())) {
    const double v = conj.flat_point() - 10.0;
    EXPECT_NEAR(conj.value(v), oracle::conjugate_on_grid(k, v), 1e-6);
  }
}

TEST_P(EachKind, MonotoneConjugateIsNondecreasing) {
  const auto conj = monotone_conjugate(GetParam());
  double prev = -kInf;
  for (double v = -8.0; v < conj.domain_upper() && v < 5.0; v += 0.01) {
    EXPECT_GE(conj.value(v), prev - 1e-15);
    prev = conj.value(v);
  }
}

TEST_P(EachKind, SlopeAndCurvatureMatchDifferences) {
  const auto conj = monotone_conjugate(GetParam());
  const double hi = std::min(conj.domain_upper(), 2.0);
  for (double v = -3.0 + 0.013; v < hi - 0.05; v += 0.1) {
    if (std::abs(v - conj.flat_point()) < 1e-3) continue;
    const double h = 1e-6;
    const auto p = conj.eval(v);
    EXPECT_NEAR(p.slope, (conj.value(v + h) - conj.value(v - h)) / (2 * h), 1e-5 * (1 + std::abs(p.slope)));
    EXPECT_NEAR(p.curvature, (conj.eval(v + h).slope - conj.eval(v - h).slope) / (2 * h),
                1e-4 * (1 + std::abs(p.curvature)));
  }
}

TEST(Conjugate, CatalogEntries) {
  EXPECT_DOUBLE_EQ(f_conjugate(FKind::kl, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(f_conjugate(FKind::pearson_chi2, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(f_value(FKind::kl, std::exp(1.0)), std::exp(1.0));
  EXPECT_DOUBLE_EQ(f_value(FKind::total_variation, 3.0), 1.0);
  EXPECT_TRUE(std::isinf(f_value(FKind::reverse_kl, 0.0)));
  EXPECT_TRUE(std::isinf(f_conjugate(FKind::total_variation, 0.75)));
}

TEST(Conjugate, PearsonFlatBelowMinimizer) {
  const auto c = monotone_conjugate(FKind::pearson_chi2);
  EXPECT_DOUBLE_EQ(c.value(-5.0), -1.0);
  EXPECT_DOUBLE_EQ(c.value(0.0), 0.0);
  EXPECT_DOUBLE_EQ(c.subgradient(-5.0), 0.0);
}

TEST(Conjugate, KlIsUnchanged) {
  const auto c = monotone_conjugate(FKind::kl);
  for (double v = -5.0; v < 3.0; v += 0.25) EXPECT_DOUBLE_EQ(c.value(v), f_conjugate(FKind::kl, v));
}

TEST(Conjugate, TotalVariationClippedBelow) {
  const auto c = monotone_conjugate(FKind::total_variation);
  EXPECT_DOUBLE_EQ(c.value(-3.0), -0.5);
  EXPECT_DOUBLE_EQ(c.value(0.2), 0.2);
  EXPECT_DOUBLE_EQ(c.value(0.5), 0.5);
  EXPECT_TRUE(std::isinf(c.value(0.5000001)));
  // smoothing approaches the kink from above
  for (double mu : {1e-2, 1e-4, 1e-8}) {
    EXPECT_GE(c.eval_smoothed(-0.5, mu).value, -0.5);
    EXPECT_NEAR(c.eval_smoothed(-0.5, mu).value, -0.5, mu);
  }
}

TEST(Conjugate, AliasesParse) {
  EXPECT_EQ(parse_fkind("kl"), FKind::kl);
  EXPECT_EQ(parse_fkind("pearson"), FKind::pearson_chi2);
  EXPECT_EQ(parse_fkind("tv"), FKind::total_variation);
  EXPECT_THROW(parse_fkind("wasserstein"), Error);
}

TEST(Budget, AveragesDivergence) {
  EXPECT_EQ(budget_value({FKind::pearson_chi2, 0.0}, Vector::Ones(4)), 0.0);
  for (FKind k : kAllFKinds) EXPECT_NEAR(budget_value({k, 0.0}, Vector::Ones(3)), 0.0, 1e-12);
  Vector w(2);
  w << std::exp(1.0), 1.0;
  EXPECT_NEAR(budget_value({FKind::kl, 0.0}, w), std::exp(1.0) / 2.0, 1e-15);
  EXPECT_DOUBLE_EQ(budget_value({FKind::neyman_chi2, 0.0}, Vector::Constant(2, 2.0)), -0.5);
}

TEST(Tan, UnconfoundedCollapse) {
  for (double p : {0.1, 0.5, 0.93}) {
    const auto b = tan_bounds(1.0, p);
    EXPECT_EQ(b.a_pi, p);
    EXPECT_EQ(b.b_pi, p);
    EXPECT_EQ(b.a_wtilde, 1.0);
    EXPECT_EQ(b.b_wtilde, 1.0);
  }
}

TEST(Tan, HalfPropensityAtGammaTwo) {
  const auto b = tan_bounds(2.0, 0.5);
  EXPECT_NEAR(b.a_pi, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(b.b_pi, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(b.a_wtilde, 0.75, 1e-15);
  EXPECT_NEAR(b.b_wtilde, 1.5, 1e-15);
}

TEST(Tan, ProductSymmetricInGamma) {
  for (double g : {1.5, 2.0, 4.0}) {
    const auto b = tan_bounds(g, 0.5);
    const double expect = (1.0 + g) / 2.0 * (1.0 + 1.0 / g) / 2.0;
    EXPECT_NEAR(b.a_wtilde * b.b_wtilde, expect, 1e-14);
  }
}

TEST(Tan, QuantileLevels) {
  EXPECT_NEAR(tan_quantile_level(1.5), 0.4, 1e-15);
  EXPECT_EQ(tan_quantile_level(1.0), 0.5);
  EXPECT_NEAR(box_quantile_level(0.75, 1.5), 1.0 / 3.0, 1e-15);
  // the Tan level is the box level for any propensity
  for (double p : {0.2, 0.5, 0.8}) {
    const auto b = tan_bounds(3.0, p);
    EXPECT_NEAR(box_quantile_level(b.a_wtilde, b.b_wtilde), tan_quantile_level(3.0), 1e-12);
  }
}

TEST(ModelGrammar, ParsesAndRejects) {
  const auto box = parse_sensitivity_model("box:GAMMA=1.5");
  ASSERT_TRUE(box.box);
  EXPECT_EQ(box.box->gamma_odds, 1.5);
  const auto f = parse_sensitivity_model("f:KIND=kl,GAMMA_BUDGET=0.01");
  ASSERT_TRUE(f.fdiv);
  EXPECT_EQ(f.fdiv->kind, FKind::kl);
  EXPECT_EQ(f.fdiv->budget, 0.01);
  const auto both = parse_sensitivity_model("box:GAMMA=2+f:KIND=pearson,GAMMA_BUDGET=0.1");
  EXPECT_TRUE(both.box && both.fdiv);
  EXPECT_EQ(parse_sensitivity_model(both.description()).description(), both.description());
  EXPECT_THROW(parse_sensitivity_model("box:GAMMA=0.5"), Error);
  EXPECT_THROW(parse_sensitivity_model("f:KIND=kl,GAMMA_BUDGET=-1"), Error);
  EXPECT_THROW(parse_sensitivity_model("box:G=2"), Error);
  EXPECT_THROW(parse_sensitivity_model("ellipse:GAMMA=2"), Error);
}

TEST(Selfcheck, FreshCatalogPasses) {
  for (const auto& c : run_selfcheck()) EXPECT_TRUE(c.passed) << c.name << " error " << c.max_error;
}

TEST(Selfcheck, FlippedConjugateSignIsCaught) {
  SelfcheckHooks bad;
  bad.conjugate = [](FKind k, double v) {
    const double x = monotone_conjugate(k).value(v);
    return k == FKind::pearson_chi2 ? -x : x;
  };
  const auto grid = check_conjugate_grid(bad);
  EXPECT_FALSE(grid.passed);
  EXPECT_EQ(grid.name, "conjugate_grid");
  EXPECT_GT(grid.max_error, grid.tolerance);
  EXPECT_FALSE(check_young_fenchel(bad).passed);
}
