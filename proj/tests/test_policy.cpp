#include "kcmc/policy.hpp"
#include "kcmc/synthetic.hpp"

#include <gtest/gtest.h>

using namespace kcmc;

TEST(Policies, NominalIsLogistic) {
  const auto pi = policies::nominal();
  const Vector beta = policies::nominal_coefficients();
  Vector x(5);
  x << 0.3, -0.2, 1.0, 0.0, 0.7;
  EXPECT_NEAR(pi(1, x), 1.0 / (1.0 + std::exp(-beta.dot(x))), 1e-15);
  EXPECT_NEAR(pi(0, x) + pi(1, x), 1.0, 1e-15);
}

TEST(Policies, PresetsByName) {
  Vector x = Vector::Zero(5);
  EXPECT_EQ(policies::by_name("always1")(1, x), 1.0);
  EXPECT_EQ(policies::by_name("always0")(1, x), 0.0);
  EXPECT_EQ(policies::by_name("uniform")(0, x), 0.5);
  EXPECT_THROW(policies::by_name("greedy"), Error);
}

TEST(Policies, TakenProbabilities) {
  const auto d = generate_synthetic(30, 1);
  const auto pi = policies::nominal();
  const Vector p = pi.taken_probabilities(d.obs.actions, d.obs.covariates);
  for (Index i = 0; i < 30; ++i)
    EXPECT_DOUBLE_EQ(p[i], pi(d.obs.actions[static_cast<std::size_t>(i)], d.obs.covariates.row(i).transpose()));
}

TEST(Simplex, MatchesThresholdBisection) {
  auto rng = make_stream(5, Stream::test);
  for (int rep = 0; rep < 200; ++rep) {
    const Index k = 2 + rep % 5;
    Vector v(k);
    for (Index j = 0; j < k; ++j) v[j] = 3.0 * rng.normal();
    double lo = v.minCoeff() - 1.0, hi = v.maxCoeff();
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      ((v.array() - mid).max(0.0).sum() > 1.0 ? lo : hi) = mid;
    }
    const Vector ref = (v.array() - 0.5 * (lo + hi)).max(0.0).matrix();
    const Vector got = project_to_simplex(v);
    EXPECT_LT((got - ref).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(got.sum(), 1.0, 1e-12);
  }
}

TEST(Simplex, NearestPointAgainstRandomSimplexPoints) {
  auto rng = make_stream(6, Stream::test);
  Vector v(3);
  v << 0.9, -0.4, 0.8;
  const Vector p = project_to_simplex(v);
  for (int rep = 0; rep < 500; ++rep) {
    Vector q(3);
    for (Index j = 0; j < 3; ++j) q[j] = -std::log(rng.uniform());
    q /= q.sum();
    EXPECT_LE((p - v).norm(), (q - v).norm() + 1e-15);
  }
}

TEST(Mixture, EvaluatesConvexCombination) {
  const std::vector<Policy> comps{policies::always(0), policies::always(1), policies::nominal()};
  Vector beta(3);
  beta << 0.2, 0.3, 0.5;
  const MixturePolicy mix(comps, beta);
  const auto pi = mix.as_policy();
  Vector x(5);
  x << 0.1, 0.2, 0.3, 0.4, 0.5;
  EXPECT_NEAR(pi(1, x), 0.3 + 0.5 * comps[2](1, x), 1e-15);
  EXPECT_NEAR(pi(0, x) + pi(1, x), 1.0, 1e-15);
}

TEST(Mixture, RejectsOffSimplexWeights) {
  const std::vector<Policy> comps{policies::always(0), policies::always(1)};
  EXPECT_THROW(MixturePolicy(comps, Vector::Constant(2, 0.7)), Error);
  EXPECT_THROW(MixturePolicy(comps, Vector::Ones(3) / 3.0), Error);
}
