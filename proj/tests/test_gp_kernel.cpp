#include <cmath>

#include <gtest/gtest.h>

#include "covreg/gp_kernel.hpp"
#include "covreg/random.hpp"

using namespace covreg;

namespace {

Vector vec1(double v) {
  Vector x(1);
  x << v;
  return x;
}

}  // namespace

TEST(SeKernel, ZeroDistanceIsOne) {
  EXPECT_DOUBLE_EQ(se_kernel(vec1(0.4), vec1(0.4), {10.0, 1e-5}), 1.0);
}

TEST(SeKernel, ScalarEvaluation) {
  const double d = std::sqrt(0.1);
  EXPECT_NEAR(se_kernel(vec1(0.0), vec1(d), {10.0, 1e-5}), std::exp(-1.0), 1e-12);
  EXPECT_NEAR(se_kernel(vec1(0.0), vec1(0.3162), {10.0, 1e-5}), 0.367879, 1e-4);
}

TEST(SeKernel, VanishingDecayTendsToOne) {
  EXPECT_NEAR(se_kernel(vec1(-3.0), vec1(5.0), {1e-12, 0.0}), 1.0, 1e-9);
}

TEST(SeKernel, SymmetricAndBounded) {
  RandomStream rng(3);
  for (int t = 0; t < 200; ++t) {
    const Vector a = rng.normal_vector(3), b = rng.normal_vector(3);
    const double ab = se_kernel(a, b, {2.5, 0.0});
    EXPECT_EQ(ab, se_kernel(b, a, {2.5, 0.0}));
    EXPECT_GT(ab, 0.0);
    EXPECT_LT(ab, 1.0);
  }
}

TEST(SeKernel, DimensionMismatchThrows) {
  EXPECT_THROW(se_kernel(Vector::Zero(2), Vector::Zero(3), {}), std::invalid_argument);
}

TEST(KernelParams, RejectsNonPositiveKappaAndNegativeNugget) {
  EXPECT_THROW((KernelParams{0.0, 1e-5}.validate()), std::invalid_argument);
  EXPECT_THROW((KernelParams{1.0, -1.0}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((KernelParams{1.0, 0.0}.validate()));
}

TEST(GramMatrix, SinglePoint) {
  const GramMatrix g = gram_matrix(Matrix::Constant(1, 1, 0.5), {10.0, 1e-5});
  ASSERT_EQ(g.size(), 1);
  EXPECT_DOUBLE_EQ(g.values(0, 0), 1.00001);
}

TEST(GramMatrix, ExactlySymmetricWithNuggetDiagonal) {
  RandomStream rng(5);
  Matrix xs(15, 2);
  for (Index i = 0; i < 15; ++i) xs.row(i) = rng.normal_vector(2).transpose();
  const GramMatrix g = gram_matrix(xs, {3.0, 1e-5});
  EXPECT_TRUE(g.values == g.values.transpose());
  for (Index i = 0; i < 15; ++i) EXPECT_DOUBLE_EQ(g.values(i, i), 1.0 + 1e-5);
  EXPECT_NEAR(g.values(2, 7), se_kernel(xs.row(2).transpose(), xs.row(7).transpose(), {3.0, 0.0}), 1e-15);
}

TEST(GramMatrix, NuggetBoundsSmallestEigenvalue) {
  Matrix xs(20, 1);
  for (Index i = 0; i < 20; ++i) xs(i, 0) = static_cast<double>(i + 1) / 20.0;
  const GramMatrix g = gram_matrix(xs, {10.0, 1e-5});
  Eigen::SelfAdjointEigenSolver<Matrix> es(g.values);
  EXPECT_GE(es.eigenvalues().minCoeff(), 1e-5 * (1.0 - 1e-6));
}

TEST(CholPsd, IdentityIsItsOwnFactor) {
  const CholeskyFactor f = chol_psd(Matrix::Identity(4, 4));
  EXPECT_TRUE(f.lower.isApprox(Matrix::Identity(4, 4)));
  EXPECT_EQ(f.jitter, 0.0);
}

TEST(CholPsd, HandComputedTwoByTwo) {
  Matrix m(2, 2);
  m << 4, 2, 2, 3;
  const CholeskyFactor f = chol_psd(m);
  EXPECT_NEAR(f.lower(0, 0), 2.0, 1e-15);
  EXPECT_NEAR(f.lower(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(f.lower(1, 0), 1.0, 1e-15);
  EXPECT_NEAR(f.lower(1, 1), std::sqrt(2.0), 1e-15);
}

TEST(CholPsd, RankDeficientSucceedsWithJitter) {
  Matrix m(2, 2);
  m << 1, 1, 1, 1;
  const CholeskyFactor f = chol_psd(m);
  EXPECT_GT(f.jitter, 0.0);
  EXPECT_GT(f.attempts, 1);
  EXPECT_LE((f.lower * f.lower.transpose() - m).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(CholPsd, IndefiniteMatrixReportsPivot) {
  Matrix m(2, 2);
  m << 1, 0, 0, -1;
  try {
    chol_psd(m);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("pivot 1"), std::string::npos) << e.what();
  }
}

TEST(CholPsd, AsymmetricInputRejected) {
  Matrix m(2, 2);
  m << 1, 0.5, 0.2, 1;
  EXPECT_THROW(chol_psd(m), std::invalid_argument);
}

TEST(CholPsd, ReconstructsWellConditionedGram) {
  Matrix xs(30, 1);
  for (Index i = 0; i < 30; ++i) xs(i, 0) = static_cast<double>(i) / 29.0;
  const GramMatrix g = gram_matrix(xs, {50.0, 1e-3});
  const CholeskyFactor f = chol_psd(g.values);
  EXPECT_LE((f.lower * f.lower.transpose() - g.values).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(GpDraw, DeterministicForFixedSeed) {
  Matrix xs(5, 1);
  xs << 0.1, 0.2, 0.3, 0.4, 0.5;
  const GramMatrix g = gram_matrix(xs, {10.0, 1e-5});
  RandomStream a(42), b(42);
  EXPECT_TRUE(gp_draw(g, a) == gp_draw(g, b));
}

TEST(GpDraw, SinglePointIsStandardNormal) {
  GramMatrix g{Matrix::Ones(1, 1), Matrix::Zero(1, 1), {10.0, 0.0}};
  RandomStream rng(1);
  const int m = 20000;
  double s = 0.0, s2 = 0.0;
  for (int t = 0; t < m; ++t) {
    const double v = gp_draw(g, rng)(0);
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / m, 0.0, 4.0 / std::sqrt(m));
  EXPECT_NEAR(s2 / m, 1.0, 4.0 * std::sqrt(2.0 / m));
}

TEST(GpDraw, MonteCarloCorrelationMatchesKernel) {
  Matrix xs(2, 1);
  xs << 0.0, 0.1;
  const GpPrior prior = GpPrior::build(xs, {10.0, 1e-5});
  RandomStream rng(11);
  const int m = 100000;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (int t = 0; t < m; ++t) {
    const Vector v = prior.draw(rng);
    sab += v(0) * v(1);
    saa += v(0) * v(0);
    sbb += v(1) * v(1);
  }
  const double corr = sab / std::sqrt(saa * sbb);
  EXPECT_NEAR(corr, std::exp(-0.1), 0.01);
}

TEST(GpConditional, MomentsMatchDirectPrecisionForm) {
  Matrix xs(6, 1);
  for (Index i = 0; i < 6; ++i) xs(i, 0) = 0.15 * static_cast<double>(i);
  const GpPrior prior = GpPrior::build(xs, {4.0, 1e-3});
  Vector d(6), b(6);
  d << 0.5, 0.0, 2.0, 1.0, 0.0, 3.0;
  b << 0.3, 0.0, -1.0, 0.2, 0.0, 0.7;
  const auto [mean, cov] = gp_conditional_moments(prior, d, b);
  Matrix prec = prior.gram.values.inverse();
  prec.diagonal() += d;
  const Matrix s = prec.inverse();
  EXPECT_LE((cov - s).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE((mean - s * b).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(GpConditional, DrawsMatchMoments) {
  Matrix xs(3, 1);
  xs << 0.0, 0.2, 0.5;
  const GpPrior prior = GpPrior::build(xs, {3.0, 1e-5});
  Vector d(3), b(3);
  d << 1.5, 0.0, 4.0;
  b << 1.0, 0.0, -2.0;
  const auto [mean, cov] = gp_conditional_moments(prior, d, b);
  RandomStream rng(8);
  const int m = 100000;
  Vector s = Vector::Zero(3);
  Matrix s2 = Matrix::Zero(3, 3);
  for (int t = 0; t < m; ++t) {
    const Vector f = sample_gp_conditional(prior, d, b, rng);
    s += f;
    s2 += f * f.transpose();
  }
  const Vector emp_mean = s / m;
  const Matrix emp_cov = s2 / m - emp_mean * emp_mean.transpose();
  for (Index i = 0; i < 3; ++i) {
    const double se = std::sqrt(cov(i, i) / m);
    EXPECT_NEAR(emp_mean(i), mean(i), 4.0 * se);
    EXPECT_NEAR(emp_cov(i, i), cov(i, i), 4.0 * cov(i, i) * std::sqrt(2.0 / m));
  }
}

TEST(GpConditional, ZeroInformationGivesPrior) {
  Matrix xs(4, 1);
  xs << 0.1, 0.3, 0.6, 0.9;
  const GpPrior prior = GpPrior::build(xs, {10.0, 1e-5});
  const auto [mean, cov] = gp_conditional_moments(prior, Vector::Zero(4), Vector::Zero(4));
  EXPECT_LE(mean.cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((cov - prior.gram.values).cwiseAbs().maxCoeff(), 1e-12);
}
