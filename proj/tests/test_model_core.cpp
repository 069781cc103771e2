#include <array>
#include <cmath>

#include <gtest/gtest.h>

#include "covreg/model_core.hpp"

using namespace covreg;

namespace {

Matrix random_matrix(Index r, Index c, RandomStream& rng) {
  Matrix m(r, c);
  for (Index j = 0; j < c; ++j) m.col(j) = rng.normal_vector(r);
  return m;
}

struct Moments {
  double mean = 0.0, var = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(v.size() - 1);
  return m;
}

}  // namespace

TEST(InducedCovariance, ZeroDictionaryGivesNoise) {
  RandomStream rng(1);
  const Matrix theta = random_matrix(3, 4, rng);
  Vector s0(3);
  s0 << 0.5, 1.0, 2.0;
  const Matrix s = induced_covariance(theta, Matrix::Zero(4, 2), s0);
  EXPECT_TRUE(s.isApprox(Matrix(s0.asDiagonal())));
}

TEST(InducedCovariance, MatchesIndexSum) {
  RandomStream rng(2);
  const Index p = 3, L = 4, k = 2;
  const Matrix theta = random_matrix(p, L, rng), xi = random_matrix(L, k, rng);
  Vector s0(p);
  s0 << 0.3, 0.4, 0.5;
  const Matrix s = induced_covariance(theta, xi, s0);
  for (Index i = 0; i < p; ++i) {
    for (Index j = 0; j < p; ++j) {
      double v = i == j ? s0(i) : 0.0;
      for (Index l = 0; l < L; ++l) {
        for (Index l2 = 0; l2 < L; ++l2) {
          for (Index m = 0; m < k; ++m) v += theta(i, l) * xi(l, m) * xi(l2, m) * theta(j, l2);
        }
      }
      EXPECT_NEAR(s(i, j), v, 1e-12);
    }
  }
  EXPECT_TRUE(s == s.transpose());
}

TEST(InducedCovariance, ChoLeskyBlockReproducesTarget) {
  Matrix target(2, 2);
  target << 2, 1, 1, 2;
  Matrix theta = Matrix::Zero(2, 3);
  theta.leftCols(2).setIdentity();
  Matrix xi = Matrix::Zero(3, 3);
  xi.topLeftCorner(2, 2) = chol_psd(target).lower;
  EXPECT_NEAR(xi(1, 0), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(xi(1, 1), std::sqrt(1.5), 1e-15);
  EXPECT_LE((induced_covariance(theta, xi, Vector::Zero(2)) - target).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(InducedMean, ReductionsAndIndexSum) {
  RandomStream rng(3);
  const Matrix theta = random_matrix(4, 3, rng), xi = random_matrix(3, 2, rng);
  EXPECT_EQ(induced_mean(theta, xi, Vector::Zero(2)).cwiseAbs().maxCoeff(), 0.0);
  const Matrix c = random_matrix(3, 1, rng);
  EXPECT_LE((induced_mean(theta, c, Vector::Ones(1)) - theta * c).cwiseAbs().maxCoeff(), 1e-15);
  const Vector psi = rng.normal_vector(2);
  const Vector mu = induced_mean(theta, xi, psi);
  for (Index i = 0; i < 4; ++i) {
    double v = 0.0;
    for (Index l = 0; l < 3; ++l) {
      for (Index m = 0; m < 2; ++m) v += theta(i, l) * xi(l, m) * psi(m);
    }
    EXPECT_NEAR(mu(i), v, 1e-12);
  }
}

TEST(FactorizePsdPath, IdentityTrajectory) {
  CovarianceTrajectory t;
  t.sigmas.assign(3, Matrix::Identity(2, 2));
  const Factorization f = factorize_psd_path(t, 3, 4);
  EXPECT_TRUE(f.theta.leftCols(2).isIdentity());
  EXPECT_TRUE(f.theta.rightCols(1).isZero());
  for (const Matrix& x : f.xi) EXPECT_TRUE(x.topLeftCorner(2, 2).isIdentity());
}

TEST(FactorizePsdPath, RoundTripOnSplineGenerator) {
  RandomStream rng(4);
  const SplineCovariance sc = simulate_spline_covariance(5, 60, 5, rng);
  const Factorization f = factorize_psd_path(sc.truth, 6, 5);
  for (Index i = 0; i < sc.truth.size(); ++i) {
    const Matrix r = induced_covariance(f.theta, f.xi[i], f.sigma0);
    EXPECT_LE((r - sc.truth.sigmas[i]).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(FactorizePsdPath, RejectsSmallTruncation) {
  CovarianceTrajectory t;
  t.sigmas.assign(1, Matrix::Identity(3, 3));
  EXPECT_THROW(factorize_psd_path(t, 2, 3), std::invalid_argument);
}

TEST(SamplePrior, ReproducibleForFixedSeed) {
  const Hyperparameters h;
  const PredictorGrid xs = unit_grid(8);
  RandomStream a(9), b(9);
  const ModelState s1 = sample_prior(h, xs, 3, MeanMode::latent_mean, a);
  const ModelState s2 = sample_prior(h, xs, 3, MeanMode::latent_mean, b);
  EXPECT_TRUE(s1.theta == s2.theta);
  EXPECT_TRUE(s1.xi == s2.xi);
  EXPECT_TRUE(s1.eta == s2.eta);
  EXPECT_NO_THROW(s1.validate());
}

TEST(SamplePrior, LargeA2ShrinksLaterColumns) {
  Hyperparameters h;
  h.a2 = 1000.0;
  h.L_star = 4;
  RandomStream rng(10);
  std::vector<double> c1, c3;
  for (int t = 0; t < 1000; ++t) {
    const ShrinkageState sh = sample_shrinkage_prior(5, 4, h.a1, h.a2, rng);
    const Matrix th = sample_theta_prior(sh, rng);
    for (Index j = 0; j < 5; ++j) {
      c1.push_back(th(j, 0));
      c3.push_back(th(j, 2));
    }
  }
  EXPECT_LT(moments(c3).var, 0.01 * moments(c1).var);
}

TEST(PriorMeanCovariance, HandEvaluations) {
  const Matrix one = Matrix::Ones(1, 1);
  EXPECT_TRUE(prior_mean_covariance(1, one, Vector::Ones(1), 0.0).isApprox(Matrix::Identity(1, 1)));
  Vector tau(2);
  tau << 1, 4;
  const Matrix m = prior_mean_covariance(3, Matrix::Constant(2, 2, 2.0), tau, 0.5);
  EXPECT_NEAR(m(0, 0), 2.375, 1e-15);
  EXPECT_NEAR(m(1, 1), 2.375, 1e-15);
  EXPECT_EQ(m(0, 1), 0.0);
  EXPECT_EQ(m(1, 0), 0.0);
}

TEST(PriorMeanCovariance, InverseGammaMomentsNeedShape) {
  EXPECT_THROW(inverse_gamma_mean(1.0, 0.1), std::invalid_argument);
  EXPECT_THROW(inverse_gamma_variance(2.0, 0.1), std::invalid_argument);
  EXPECT_NEAR(inverse_gamma_mean(3.0, 2.0), 1.0, 1e-15);
  EXPECT_NEAR(inverse_gamma_variance(3.0, 2.0), 1.0, 1e-15);
}

TEST(PriorMeanCovariance, MonteCarloAgreement) {
  // Sigma(x) at a single point with phi, tau frozen; xi(x) entries are N(0, 1).
  RandomStream rng(12);
  const Index p = 3, L = 3, k = 2;
  const ShrinkageState sh = sample_shrinkage_prior(p, L, 2.0, 2.0, rng);
  const double a_s = 4.0, b_s = 2.0;
  const Matrix expect = prior_mean_covariance(k, sh.phi, sh.tau, inverse_gamma_mean(a_s, b_s));
  const int m = 40000;
  std::vector<std::vector<double>> draws(p * p);
  for (int t = 0; t < m; ++t) {
    const Matrix th = sample_theta_prior(sh, rng);
    const Matrix xi = random_matrix(L, k, rng);
    const Matrix s = induced_covariance(th, xi, sample_sigma0_prior(p, a_s, b_s, rng));
    for (Index a = 0; a < p * p; ++a) draws[a].push_back(s(a % p, a / p));
  }
  for (Index a = 0; a < p * p; ++a) {
    const Moments mo = moments(draws[a]);
    EXPECT_NEAR(mo.mean, expect(a % p, a / p), 4.0 * std::sqrt(mo.var / m)) << "entry " << a;
  }
}

TEST(PriorCovElements, DistinctPairsAreZeroUnlessBothAreVariances) {
  const Matrix phi = Matrix::Ones(3, 2);
  const Vector tau = Vector::Ones(2);
  const Vector x = Vector::Zero(1);
  EXPECT_EQ(prior_cov_elements(2, phi, tau, 0.1, 0, 1, 0, 2, x, x, {}), 0.0);
  EXPECT_EQ(prior_cov_elements(2, phi, tau, 0.1, 0, 0, 0, 1, x, x, {}), 0.0);
  EXPECT_NE(prior_cov_elements(2, phi, tau, 0.1, 0, 1, 1, 0, x, x, {}), 0.0);
  // Sigma_00 and Sigma_11 share xi(x): 2 k c^2 sum_l v_0l v_1l = 2 * 2 * 1 * 2
  EXPECT_NEAR(prior_cov_elements(2, phi, tau, 0.1, 0, 0, 1, 1, x, x, {}), 8.0, 1e-12);
  PriorCovOptions total;
  total.variant = PriorCovVariant::total;
  EXPECT_NEAR(prior_cov_elements(2, phi, tau, 0.1, 0, 0, 1, 1, x, x, {}, total), 8.0, 1e-12);
}

TEST(PriorCovElements, FarApartLeavesNoiseVariance) {
  const Matrix phi = Matrix::Constant(2, 2, 1.5);
  const Vector tau = Vector::Constant(2, 2.0);
  Vector x(1), x2(1);
  x << 0.0;
  x2 << 100.0;
  EXPECT_NEAR(prior_cov_elements(3, phi, tau, 0.7, 1, 1, 1, 1, x, x2, {10.0, 1e-5}), 0.7, 1e-15);
}

TEST(PriorCovElements, SingleColumnClosedForm) {
  // L = 1: Sigma_11 = theta^2 sum_m xi_m^2 + sigma^2; the corrected and stated
  // diagonal coefficients coincide here (4 + 2 = 5 + 1).
  Matrix phi(1, 1);
  phi << 2.0;
  Vector tau(1);
  tau << 0.5;
  const Vector x = Vector::Zero(1);
  const double v = 1.0;  // 1 / (phi tau)
  EXPECT_NEAR(prior_cov_elements(2, phi, tau, 0.0, 0, 0, 0, 0, x, x, {}), 2.0 * 6.0 * v * v, 1e-12);
}

TEST(PriorCovElements, MonteCarloExpectedConditional) {
  // E_Theta[cov(X, Y | Theta)] = E[X1 Y1] - E[X1 Y2] with X1, Y1 from one xi
  // draw and Y2 from an independent xi draw given the same Theta.
  RandomStream rng(13);
  const Index p = 2, L = 2, k = 2;
  const ShrinkageState sh = sample_shrinkage_prior(p, L, 2.0, 2.0, rng);
  const KernelParams kp{10.0, 0.0};
  Vector x(1), x2(1);
  x << 0.0;
  x2 << 0.15;
  const double c = se_kernel(x, x2, kp);
  const double rho = std::sqrt(1.0 - c * c);
  const int m = 200000;
  for (const auto& [i, j, u, v] : std::vector<std::array<Index, 4>>{{0, 1, 0, 1}, {0, 0, 0, 0}, {0, 0, 1, 1}}) {
    double acc = 0.0, acc2 = 0.0;
    for (int t = 0; t < m; ++t) {
      const Matrix th = sample_theta_prior(sh, rng);
      const Matrix xa = random_matrix(L, k, rng);
      const Matrix xb = c * xa + rho * random_matrix(L, k, rng);  // corr c with xa
      const Matrix xc = random_matrix(L, k, rng);
      const Matrix xd = c * xc + rho * random_matrix(L, k, rng);
      const double x1 = induced_covariance(th, xa, Vector::Zero(p))(i, j);
      const double y1 = induced_covariance(th, xb, Vector::Zero(p))(u, v);
      const double y2 = induced_covariance(th, xd, Vector::Zero(p))(u, v);
      const double d = x1 * (y1 - y2);
      acc += d;
      acc2 += d * d;
    }
    const double est = acc / m;
    const double se = std::sqrt((acc2 / m - est * est) / m);
    const double formula = prior_cov_elements(k, sh.phi, sh.tau, 0.0, i, j, u, v, x, x2, kp);
    EXPECT_NEAR(est, formula, 4.0 * se) << "pair " << i << j << "," << u << v;
  }
}

TEST(SplineGenerator, InterpolatesKnotsAndScalesToOne) {
  RandomStream rng(14);
  const SplineCovariance sc = simulate_spline_covariance(6, 100, 5, rng);
  double top = -1e300;
  for (Index i = 0; i < 100; ++i) {
    const Matrix s = sc.truth.sigmas[i];
    Matrix off = s;
    off.diagonal() -= sc.sigma0;
    top = std::max(top, off.maxCoeff());
    EXPECT_TRUE(s == s.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(s);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
  }
  EXPECT_NEAR(top, 1.0, 1e-9);
  EXPECT_TRUE((sc.sigma0.array() > 0.0).all());
}

TEST(SplineGenerator, KnotPositions) {
  const Vector k = spline_knot_positions(500, 5);
  EXPECT_EQ(k(0), 1.0);
  EXPECT_EQ(k(1), 125.0);
  EXPECT_EQ(k(2), 250.0);
  EXPECT_EQ(k(3), 375.0);
  EXPECT_EQ(k(4), 500.0);
}

TEST(SplineGenerator, KnotValuesAreExactProducts) {
  // Rebuild the knot matrices by replaying the generator's draws.
  const Index p = 3, n = 40, nk = 4;
  RandomStream rng(15), replay(15);
  const SplineCovariance sc = simulate_spline_covariance(p, n, nk, rng);
  Vector ramp(p);
  for (Index j = 0; j < p; ++j) ramp(j) = -static_cast<double>(p - 1) + 2.0 * static_cast<double>(j);
  Matrix sigma_s = Matrix::Zero(p, p);
  for (Index j = 0; j < p; ++j) {
    const Vector s = ramp + replay.normal_vector(p);
    sigma_s += s * s.transpose();
  }
  const Matrix ls = chol_psd(sigma_s).lower;
  for (Index k = 0; k < nk; ++k) {
    Matrix s(p, p);
    for (Index c = 0; c < p; ++c) s.col(c) = ls * replay.normal_vector(p);
    const Index row = static_cast<Index>(sc.knots(k)) - 1;
    Matrix expect = sc.alpha * s * s.transpose();
    expect.diagonal() += sc.sigma0;
    EXPECT_LE((sc.truth.sigmas[row] - expect).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + expect.cwiseAbs().maxCoeff()));
  }
}

TEST(PriorDataset, ConsistentWithGeneratingState) {
  RandomStream rng(16);
  PriorSimulationSettings s;
  s.n = 30;
  const PriorSimulation sim = simulate_from_prior_dataset(s, rng);
  EXPECT_EQ(sim.data.n(), 30);
  EXPECT_EQ(sim.data.p(), 10);
  for (Index i = 0; i < 30; ++i) {
    EXPECT_TRUE(sim.truth.sigmas[i] == induced_covariance(sim.state.theta, sim.state.xi_at(i), sim.state.sigma0));
  }
  RandomStream again(16);
  const PriorSimulation sim2 = simulate_from_prior_dataset(s, again);
  EXPECT_TRUE(sim.data.y == sim2.data.y);
}

TEST(PriorDataset, ResponsesHaveTheTrajectoryCovariance) {
  RandomStream rng(17);
  CovarianceTrajectory t;
  Matrix s(2, 2);
  s << 2.0, 0.6, 0.6, 1.0;
  Vector mu(2);
  mu << 1.0, -1.0;
  const int m = 100000;
  t.sigmas.assign(m, s);
  t.mus.assign(m, mu);
  const Matrix y = sample_responses(t, rng);
  const Vector mean = y.colwise().mean().transpose();
  const Matrix centered = y.rowwise() - mean.transpose();
  const Matrix cov = centered.transpose() * centered / (m - 1);
  for (Index a = 0; a < 2; ++a) {
    EXPECT_NEAR(mean(a), mu(a), 4.0 * std::sqrt(s(a, a) / m));
    for (Index b = 0; b < 2; ++b) {
      const double se = std::sqrt((s(a, a) * s(b, b) + s(a, b) * s(a, b)) / m);
      EXPECT_NEAR(cov(a, b), s(a, b), 4.0 * se);
    }
  }
}

TEST(Rescale, MapsGridToUnitInterval) {
  PredictorGrid xs(4, 1);
  xs << 1, 2, 3, 4;
  const PredictorGrid r = rescale_unit_interval(xs);
  EXPECT_NEAR(r(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(r(3, 0), 1.0, 1e-15);
  EXPECT_TRUE(r.isApprox(unit_grid(4)));
}

TEST(Continuity, LoadingIncrementsShrinkWithSpacing) {
  Hyperparameters h;
  h.L_star = 3;
  h.k_star = 2;
  double prev = 1e300;
  for (Index n : {20, 40, 80}) {
    RandomStream rng(18);
    const ModelState s = sample_prior(h, unit_grid(n), 3, MeanMode::zero_mean, rng);
    double worst = 0.0;
    for (Index i = 1; i < n; ++i) worst = std::max(worst, (s.loadings(i) - s.loadings(i - 1)).cwiseAbs().maxCoeff());
    EXPECT_LT(worst, prev);
    prev = worst;
  }
}
