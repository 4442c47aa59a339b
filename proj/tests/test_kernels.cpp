#include "kcmc/kernels.hpp"
#include "kcmc/oracles.hpp"
#include "kcmc/synthetic.hpp"

#include <gtest/gtest.h>

using namespace kcmc;

namespace {

Observations points(const Matrix& x, std::vector<int> actions = {}) {
  Observations obs;
  obs.covariates = x;
  obs.rewards = Vector::Zero(x.rows());
  obs.actions = actions.empty() ? std::vector<int>(static_cast<std::size_t>(x.rows()), 0) : actions;
  return obs;
}

Matrix random_psd(Index n, std::uint64_t seed) {
  auto rng = make_stream(seed, Stream::test);
  Matrix a(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) a(i, j) = rng.normal();
  return a * a.transpose() / static_cast<double>(n);
}

// e^T M e straight from the posterior formula with dense inverses.
double gp_form_dense(const Matrix& K, double s2, const Vector& e) {
  const Index n = K.rows();
  const Matrix I = Matrix::Identity(n, n);
  const Matrix inv = (K + s2 * I).inverse();
  const Matrix post = K - K * inv * K + 1e-10 * I;
  const Matrix M = inv * K * post.inverse() * K * inv;
  return e.dot(M * e);
}

}  // namespace

TEST(Gram, IdenticalRowsGiveOnes) {
  Matrix x(2, 3);
  x << 0.3, -1.0, 2.0, 0.3, -1.0, 2.0;
  const Matrix K = gram_matrix(KernelSpec{1.7}, points(x));
  EXPECT_TRUE(K.isApprox(Matrix::Ones(2, 2), 0.0));
}

TEST(Gram, FarPointsDecouple) {
  Matrix x(2, 1);
  x << 0.0, 1e3;
  const Matrix K = gram_matrix(KernelSpec{1.0}, points(x));
  EXPECT_EQ(K(0, 1), 0.0);
  EXPECT_EQ(K(0, 0), 1.0);
}

TEST(Gram, ThreePointsMatchScalarFormula) {
  Matrix x(3, 2);
  x << 0.0, 0.0, 1.0, 2.0, -0.5, 0.25;
  const double l = 0.8;
  const Matrix K = gram_matrix(KernelSpec{l}, points(x));
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) {
      const double dx = x(i, 0) - x(j, 0), dy = x(i, 1) - x(j, 1);
      EXPECT_NEAR(K(i, j), std::exp(-(dx * dx + dy * dy) / (2.0 * l * l)), 1e-12);
    }
  EXPECT_TRUE(K.isApprox(K.transpose(), 0.0));
}

TEST(Gram, ActionsSeparateIdenticalCovariates) {
  Matrix x = Matrix::Zero(2, 1);
  const Matrix K = gram_matrix(KernelSpec{1.0, 0.5}, points(x, {0, 1}));
  EXPECT_NEAR(K(0, 1), std::exp(-2.0 * 0.25 / 2.0), 1e-15);
}

TEST(Gram, SimulatedGramIsPsd) {
  const auto d = generate_synthetic(150, 2);
  const Matrix K = gram_matrix(KernelSpec{median_heuristic(d.obs)}, d.obs);
  Eigen::SelfAdjointEigenSolver<Matrix> es(K);
  EXPECT_GT(es.eigenvalues().minCoeff(), -1e-10);
}

TEST(MedianHeuristic, SmallSets) {
  Matrix two(2, 1);
  two << 0.0, 1.0;
  EXPECT_DOUBLE_EQ(median_heuristic(points(two)), 1.0);
  Matrix three(3, 1);
  three << 0.0, 1.0, 2.0;
  EXPECT_DOUBLE_EQ(median_heuristic(points(three)), 1.0);
}

TEST(MedianHeuristic, ScalesWithCovariates) {
  const auto d = generate_synthetic(120, 3);
  Observations scaled = d.obs;
  scaled.covariates *= 2.5;
  EXPECT_NEAR(median_heuristic(scaled), 2.5 * median_heuristic(d.obs), 1e-12);
}

TEST(TruncatedEig, IdentityAndRankOne) {
  const auto id = truncated_eig(Matrix::Identity(5, 5), 2);
  EXPECT_NEAR(id.eigenvalues[0], 1.0, 1e-12);
  EXPECT_NEAR(id.eigenvalues[1], 1.0, 1e-12);
  Vector v(4);
  v << 1.0, -2.0, 0.5, 3.0;
  const auto r1 = truncated_eig(v * v.transpose(), 2);
  EXPECT_NEAR(r1.eigenvalues[0], v.squaredNorm(), 1e-10);
  EXPECT_NEAR(r1.eigenvalues[1], 0.0, 1e-10);
}

TEST(TruncatedEig, MatchesJacobiRotations) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Matrix K = random_psd(6, s);
    const auto dec = truncated_eig(K, 6);
    Vector ref = oracle::jacobi_eigenvalues(K);
    std::sort(ref.data(), ref.data() + ref.size(), std::greater<>());
    for (Index d = 0; d < 6; ++d) EXPECT_NEAR(dec.eigenvalues[d], std::max(ref[d], 0.0), 1e-9);
  }
}

TEST(TruncatedEig, SubspaceIterationAgreesWithDense) {
  const auto d = generate_synthetic(300, 4);
  const Matrix K = gram_matrix(KernelSpec{median_heuristic(d.obs)}, d.obs);
  EigenOptions iter;
  iter.dense_limit = 10;
  const auto a = truncated_eig(K, 8);
  const auto b = truncated_eig(K, 8, iter);
  for (Index k = 0; k < 8; ++k) EXPECT_NEAR(a.eigenvalues[k], b.eigenvalues[k], 1e-8 * a.eigenvalues[0]);
}

TEST(Kpca, SingleSample) {
  const auto f = kpca_features(truncated_eig(Matrix::Constant(1, 1, 2.0), 1));
  ASSERT_EQ(f.psi.rows(), 1);
  EXPECT_NEAR(std::abs(f.psi(0, 0)), 1.0, 1e-15);
}

TEST(Kpca, ColumnsAreOrthonormalUnderEmpiricalMean) {
  const auto d = generate_synthetic(200, 5);
  const Matrix K = gram_matrix(KernelSpec{median_heuristic(d.obs)}, d.obs);
  const auto f = kpca_features(truncated_eig(K, 10));
  const Matrix G = f.psi.transpose() * f.psi / 200.0;
  EXPECT_LT((G - Matrix::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Kpca, IdentityKernelGivesScaledBasis) {
  const auto f = kpca_features(truncated_eig(Matrix::Identity(4, 4), 4));
  // each column is 2 e_j up to sign, and together they cover all four axes
  const Matrix a = f.psi.cwiseAbs();
  EXPECT_LT((a.transpose() * a - 4.0 * Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((f.psi.transpose() * f.psi - 4.0 * Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Kpca, SpectrumSurvivesJson) {
  const auto dec = truncated_eig(random_psd(5, 9), 3);
  nlohmann::json j = dec;
  const auto back = j.get<SpectralDecomposition>();
  EXPECT_TRUE(back.eigenvalues == dec.eigenvalues);
  EXPECT_TRUE(back.eigenvectors == dec.eigenvectors);
}

TEST(GpQuadratic, ScaledIdentityKernel) {
  const double c = 2.0, s2 = 0.5;
  const auto q = gp_quadratic_full(c * Matrix::Identity(5, 5), s2);
  Vector e(5);
  e << 1.0, -0.5, 0.25, 2.0, 0.0;
  EXPECT_NEAR(q.value(e), c / (s2 * (c + s2)) * e.squaredNorm(), 1e-8);
  EXPECT_EQ(q.value(Vector::Zero(5)), 0.0);
}

TEST(GpQuadratic, FullMatchesDenseInverse) {
  auto rng = make_stream(31, Stream::test);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Matrix K = random_psd(4, 10 + s) + 0.1 * Matrix::Identity(4, 4);
    Vector e(4);
    for (Index i = 0; i < 4; ++i) e[i] = rng.normal();
    const double ref = gp_form_dense(K, 0.7, e);
    EXPECT_NEAR(gp_quadratic_full(K, 0.7).value(e), ref, 1e-8 * std::abs(ref));
  }
}

TEST(GpQuadratic, LowRankAtFullRankMatchesFull) {
  auto rng = make_stream(32, Stream::test);
  const Matrix K = random_psd(8, 40) + 0.05 * Matrix::Identity(8, 8);
  auto dec = truncated_eig(K, 8);
  dec.sigma2 = 0.4;
  const auto full = gp_quadratic_full(K, 0.4);
  const auto low = gp_quadratic_lowrank(dec);
  for (int rep = 0; rep < 10; ++rep) {
    Vector e(8);
    for (Index i = 0; i < 8; ++i) e[i] = rng.normal();
    EXPECT_NEAR(low.value(e), full.value(e), 1e-8 * full.value(e));
  }
}

TEST(GpQuadratic, LowRankLimits) {
  Vector v(3);
  v << 1.0, 1.0, 0.0;
  v.normalize();
  SpectralDecomposition dec;
  dec.n = 3;
  dec.eigenvalues = Vector::Constant(1, 1e-6);
  dec.eigenvectors = v;
  dec.sigma2 = 1.0;
  const auto q = gp_quadratic_lowrank(dec);
  Vector e(3);
  e << 1.0, 2.0, 3.0;
  EXPECT_NEAR(q.value(e), 1e-6 / (1.0 + 1e-6) * std::pow(v.dot(e), 2), 1e-18);
  Vector orth(3);
  orth << 1.0, -1.0, 5.0;
  EXPECT_NEAR(q.value(orth), 0.0, 1e-30);
}

TEST(Chi2, ClosedFormsAndMonotonicity) {
  EXPECT_NEAR(chi2_quantile(2, 0.95), -2.0 * std::log(0.05), 1e-10);
  EXPECT_NEAR(chi2_quantile(2, 0.95), 5.991464547, 1e-8);
  EXPECT_NEAR(chi2_quantile(1, 0.682689492137086), 1.0, 1e-9);
  for (Index dof : {1, 3, 10, 64}) EXPECT_GT(chi2_quantile(dof, 0.99), chi2_quantile(dof, 0.95));
  EXPECT_NEAR(oracle::chi2_cdf_simpson(4, chi2_quantile(4, 0.95)), 0.95, 1e-8);
  EXPECT_THROW(chi2_quantile(0, 0.9), Error);
}

TEST(Sigma2, DefaultChoices) {
  Observations obs;
  obs.rewards = Vector::Zero(2);
  obs.actions = {0, 1};
  obs.covariates = Matrix::Zero(2, 1);
  const auto prop = PropensityEstimate::from_per_action(obs, Matrix::Constant(2, 2, 0.5));
  EXPECT_DOUBLE_EQ(default_sigma2(SensitivityModel::tan(1.0), prop).value, 1e-6);
  EXPECT_NEAR(default_sigma2(SensitivityModel::tan(2.0), prop).value, 0.140625, 1e-15);
  const auto kl = default_sigma2(SensitivityModel::divergence(FKind::kl, 0.1), prop);
  EXPECT_TRUE(kl.fallback);
  EXPECT_EQ(kl.value, 1.0);
}
