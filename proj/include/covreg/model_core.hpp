#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "covreg/common.hpp"
#include "covreg/gp_kernel.hpp"
#include "covreg/model.hpp"
#include "covreg/random.hpp"
#include "covreg/spline.hpp"

namespace covreg {

// ---------------------------------------------------------------------------
// Induced moments

/// Theta xi xi' Theta' + diag(sigma0), assembled as G G' so it is exactly symmetric.
inline Matrix induced_covariance(const Matrix& theta, const Matrix& xi_at_x, const Vector& sigma0) {
  if (theta.cols() != xi_at_x.rows() || theta.rows() != sigma0.size()) {
    throw std::invalid_argument("induced_covariance: dimension mismatch");
  }
  Matrix s = outer_gram(theta * xi_at_x);
  s.diagonal() += sigma0;
  return s;
}

inline Vector induced_mean(const Matrix& theta, const Matrix& xi_at_x, const Vector& psi_at_x) {
  if (theta.cols() != xi_at_x.rows() || xi_at_x.cols() != psi_at_x.size()) {
    throw std::invalid_argument("induced_mean: dimension mismatch");
  }
  return theta * (xi_at_x * psi_at_x);
}

/// Sigma(x_i) (and mu(x_i) in latent-mean mode) at every observed predictor.
inline CovarianceTrajectory state_trajectory(const ModelState& s) {
  CovarianceTrajectory t;
  t.sigmas.reserve(s.n());
  for (Index i = 0; i < s.n(); ++i) {
    t.sigmas.push_back(induced_covariance(s.theta, s.xi_at(i), s.sigma0));
  }
  if (s.mode == MeanMode::latent_mean) {
    t.mus.reserve(s.n());
    for (Index i = 0; i < s.n(); ++i) t.mus.push_back(induced_mean(s.theta, s.xi_at(i), s.psi.col(i)));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Constructive factorization

struct Factorization {
  Matrix theta;             // p x L
  std::vector<Matrix> xi;   // one L x k matrix per grid point
  Vector sigma0;            // all zeros
};

/// Theta = [I_p 0], xi(x) = [chol(Sigma(x)) 0; 0 0].
inline Factorization factorize_psd_path(const CovarianceTrajectory& traj, Index L, Index k) {
  if (traj.sigmas.empty()) throw std::invalid_argument("factorize_psd_path: empty trajectory");
  const Index p = traj.sigmas.front().rows();
  if (L < p || k < p) throw std::invalid_argument("factorize_psd_path: need L >= p and k >= p");
  Factorization f;
  f.theta = Matrix::Zero(p, L);
  f.theta.leftCols(p).setIdentity();
  f.sigma0 = Vector::Zero(p);
  f.xi.reserve(traj.sigmas.size());
  for (const Matrix& s : traj.sigmas) {
    if (s.rows() != p || s.cols() != p) throw std::invalid_argument("factorize_psd_path: ragged trajectory");
    Matrix x = Matrix::Zero(L, k);
    x.topLeftCorner(p, p) = chol_psd(s).lower;
    f.xi.push_back(std::move(x));
  }
  return f;
}

// ---------------------------------------------------------------------------
// Prior simulation

inline ShrinkageState sample_shrinkage_prior(Index p, Index L, double a1, double a2,
                                             RandomStream& rng) {
  ShrinkageState s;
  s.phi.resize(p, L);
  for (Index l = 0; l < L; ++l) {
    for (Index j = 0; j < p; ++j) s.phi(j, l) = rng.gamma(1.5, 1.5);
  }
  s.delta.resize(L);
  for (Index h = 0; h < L; ++h) s.delta(h) = rng.gamma(h == 0 ? a1 : a2, 1.0);
  s.recompute_tau();
  return s;
}

inline Matrix sample_theta_prior(const ShrinkageState& s, RandomStream& rng) {
  Matrix theta(s.phi.rows(), s.phi.cols());
  for (Index l = 0; l < theta.cols(); ++l) {
    for (Index j = 0; j < theta.rows(); ++j) {
      theta(j, l) = rng.normal() / std::sqrt(s.phi(j, l) * s.tau(l));
    }
  }
  return theta;
}

inline Vector sample_sigma0_prior(Index p, double a_sigma, double b_sigma, RandomStream& rng) {
  Vector s(p);
  for (Index j = 0; j < p; ++j) s(j) = 1.0 / rng.gamma(a_sigma, b_sigma);
  return s;
}

/// Joint prior draw given a factored Gram matrix at the predictors.
inline ModelState sample_prior(const Hyperparameters& hyper, const GpPrior& gp, Index p,
                               MeanMode mode, RandomStream& rng) {
  hyper.validate();
  if (p < 1) throw std::invalid_argument("sample_prior: p must be >= 1");
  const Index L = hyper.L_star, k = hyper.k_star, n = gp.size();
  ModelState s;
  s.mode = mode;
  s.kappa = gp.gram.params.kappa;
  s.shrinkage = sample_shrinkage_prior(p, L, hyper.a1, hyper.a2, rng);
  s.theta = sample_theta_prior(s.shrinkage, rng);
  s.xi.resize(L * k, n);
  for (Index r = 0; r < L * k; ++r) s.xi.row(r) = gp.draw(rng).transpose();
  s.sigma0 = sample_sigma0_prior(p, hyper.a_sigma, hyper.b_sigma, rng);
  if (mode == MeanMode::latent_mean) {
    s.psi.resize(k, n);
    for (Index m = 0; m < k; ++m) s.psi.row(m) = gp.draw(rng).transpose();
    s.nu.resize(k, n);
    for (Index i = 0; i < n; ++i) s.nu.col(i) = rng.normal_vector(k);
    s.eta = s.psi + s.nu;
  } else {
    s.eta.resize(k, n);
    for (Index i = 0; i < n; ++i) s.eta.col(i) = rng.normal_vector(k);
  }
  return s;
}

inline ModelState sample_prior(const Hyperparameters& hyper, const PredictorGrid& xs, Index p,
                               MeanMode mode, RandomStream& rng) {
  return sample_prior(hyper, GpPrior::build(xs, hyper.kernel), p, mode, rng);
}

// ---------------------------------------------------------------------------
// Prior moments

/// Mean of sigma_j^2 when sigma_j^-2 ~ Ga(a, b).
inline double inverse_gamma_mean(double a_sigma, double b_sigma) {
  if (!(a_sigma > 1.0)) throw std::invalid_argument("prior mean of sigma^2 needs a_sigma > 1");
  return b_sigma / (a_sigma - 1.0);
}

inline double inverse_gamma_variance(double a_sigma, double b_sigma) {
  if (!(a_sigma > 2.0)) throw std::invalid_argument("prior variance of sigma^2 needs a_sigma > 2");
  return b_sigma * b_sigma / ((a_sigma - 1.0) * (a_sigma - 1.0) * (a_sigma - 2.0));
}

/// E[Sigma(x) | phi, tau] = diag(k sum_l phi_jl^-1 tau_l^-1 + mu_sigma).
inline Matrix prior_mean_covariance(Index k_star, const Matrix& phi, const Vector& tau,
                                    double mu_sigma) {
  if (phi.cols() != tau.size()) throw std::invalid_argument("prior_mean_covariance: phi/tau mismatch");
  if (!(phi.array() > 0.0).all() || !(tau.array() > 0.0).all()) {
    throw std::invalid_argument("prior_mean_covariance: phi and tau must be positive");
  }
  if (!std::isfinite(mu_sigma)) throw std::invalid_argument("prior_mean_covariance: mu_sigma not finite");
  const Vector v = (phi.array().inverse().rowwise() * tau.array().inverse().transpose())
                       .rowwise()
                       .sum()
                       .matrix();
  Matrix out = Matrix::Zero(phi.rows(), phi.rows());
  out.diagonal() = static_cast<double>(k_star) * v.array() + mu_sigma;
  return out;
}

/// Exponent applied to c(x, x') in the dependence term.
enum class KernelExponent { c, c_squared };

/// expected_conditional: E_Theta[cov(Sigma_ij(x), Sigma_uv(x') | Theta)] given phi, tau.
/// total: adds the Theta-level term k^2 cov((Theta Theta')_ij, (Theta Theta')_uv).
enum class PriorCovVariant { expected_conditional, total };

struct PriorCovOptions {
  KernelExponent exponent = KernelExponent::c_squared;
  PriorCovVariant variant = PriorCovVariant::expected_conditional;
};

/// cov(Sigma_ij(x), Sigma_uv(x2)) under the prior with phi, tau held fixed.
///
/// Given Theta, Isserlis' theorem gives k c^2 (A_iu A_jv + A_iv A_ju) with
/// A = Theta Theta'. Averaging over Theta with v_l = 1 / (phi_l tau_l):
///   i != j : k c^2 (sum_l v_il v_jl + sum_l v_il sum_l v_jl)
///   i == j : k c^2 (4 sum_l v_il^2 + 2 (sum_l v_il)^2) + sigma_var
///   (i, i) with (u, u), i != u : 2 k c^2 sum_l v_il v_ul
/// and 0 for every other pair of distinct elements.
inline double prior_cov_elements(Index k_star, const Matrix& phi, const Vector& tau,
                                 double sigma_var, Index i, Index j, Index u, Index v,
                                 const Vector& x, const Vector& x2, const KernelParams& kernel,
                                 const PriorCovOptions& opts = {}) {
  const Index p = phi.rows();
  if (phi.cols() != tau.size()) throw std::invalid_argument("prior_cov_elements: phi/tau mismatch");
  for (Index idx : {i, j, u, v}) {
    if (idx < 0 || idx >= p) throw std::out_of_range("prior_cov_elements: index out of range");
  }
  if (i > j) std::swap(i, j);
  if (u > v) std::swap(u, v);
  const bool two_variances = i == j && u == v && i != u;
  if ((i != u || j != v) && !two_variances) return 0.0;

  const double c = se_kernel(x, x2, kernel);
  const double dep = opts.exponent == KernelExponent::c ? c : c * c;
  const double k = static_cast<double>(k_star);
  const Vector inv_tau = tau.cwiseInverse();
  const Vector vi = phi.row(i).transpose().cwiseInverse().cwiseProduct(inv_tau);
  if (two_variances) {
    // Theta rows are independent, so only the xi-level term survives.
    const Vector vu = phi.row(u).transpose().cwiseInverse().cwiseProduct(inv_tau);
    return 2.0 * k * dep * vi.dot(vu);
  }
  const Vector vj = phi.row(j).transpose().cwiseInverse().cwiseProduct(inv_tau);

  if (i != j) {
    const double cross = vi.dot(vj);
    double out = k * dep * (cross + vi.sum() * vj.sum());
    if (opts.variant == PriorCovVariant::total) out += k * k * cross;
    return out;
  }
  const double sq = vi.squaredNorm();
  double out = k * dep * (4.0 * sq + 2.0 * vi.sum() * vi.sum());
  if (std::isfinite(sigma_var)) out += sigma_var;
  else throw std::invalid_argument("prior_cov_elements: sigma_var must be finite (a_sigma > 2)");
  if (opts.variant == PriorCovVariant::total) out += k * k * 2.0 * sq;
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generators

/// Maps each predictor coordinate affinely so that its minimum lands on 1/n
/// and its maximum on 1. For the grid {1, ..., n} this gives i / n.
inline PredictorGrid rescale_unit_interval(const PredictorGrid& xs) {
  PredictorGrid out = xs;
  const double n = static_cast<double>(xs.rows());
  for (Index c = 0; c < xs.cols(); ++c) {
    const double lo = xs.col(c).minCoeff(), hi = xs.col(c).maxCoeff();
    if (hi > lo) {
      out.col(c) = ((xs.col(c).array() - lo) / (hi - lo) * (n - 1.0) / n + 1.0 / n).matrix();
    } else {
      out.col(c).setOnes();
    }
  }
  return out;
}

/// x_i = i / n for i = 1..n as an n x 1 grid.
inline PredictorGrid unit_grid(Index n) {
  PredictorGrid xs(n, 1);
  for (Index i = 0; i < n; ++i) xs(i, 0) = static_cast<double>(i + 1) / static_cast<double>(n);
  return xs;
}

/// y_i ~ N(mu_i, Sigma_i) for every entry of a trajectory.
inline Matrix sample_responses(const CovarianceTrajectory& traj, RandomStream& rng) {
  const Index n = traj.size();
  if (n == 0) throw std::invalid_argument("sample_responses: empty trajectory");
  const Index p = traj.sigmas.front().rows();
  Matrix y(n, p);
  for (Index i = 0; i < n; ++i) {
    const Matrix l = chol_psd(traj.sigmas[i]).lower;
    Vector yi = l * rng.normal_vector(p);
    if (traj.has_mean()) yi += traj.mus[i];
    y.row(i) = yi.transpose();
  }
  return y;
}

struct PriorSimulation {
  Dataset data;
  CovarianceTrajectory truth;
  ModelState state;
};

/// Generating settings of the prior-draw benchmark: p = 10, n = 100, L = 5,
/// k = 4, kappa = 10, a1 = a2 = 10, sigma^-2 ~ Ga(1, 0.1), latent mean.
struct PriorSimulationSettings {
  Hyperparameters hyper{10.0, 10.0, 1.0, 0.1, 5, 4, KernelParams{10.0, 1e-5}};
  Index p = 10;
  Index n = 100;
  MeanMode mode = MeanMode::latent_mean;
};

inline PriorSimulation simulate_from_prior_dataset(const Hyperparameters& hyper,
                                                   const PredictorGrid& xs, Index p, MeanMode mode,
                                                   RandomStream& rng) {
  PriorSimulation sim;
  sim.state = sample_prior(hyper, xs, p, mode, rng);
  sim.truth = state_trajectory(sim.state);
  sim.data = Dataset::complete(xs, sample_responses(sim.truth, rng));
  return sim;
}

inline PriorSimulation simulate_from_prior_dataset(const PriorSimulationSettings& s,
                                                   RandomStream& rng) {
  return simulate_from_prior_dataset(s.hyper, unit_grid(s.n), s.p, s.mode, rng);
}

struct SplineCovariance {
  CovarianceTrajectory truth;  // zero mean
  PredictorGrid xs;            // 1..n, n x 1
  Vector knots;
  Vector sigma0;
  double alpha = 1.0;
};

/// Knot positions max(1, round(k n / (n_knots - 1))), k = 0..n_knots-1.
inline Vector spline_knot_positions(Index n, Index n_knots) {
  Vector knots(n_knots);
  for (Index k = 0; k < n_knots; ++k) {
    const double pos = std::round(static_cast<double>(k) * static_cast<double>(n) /
                                  static_cast<double>(n_knots - 1));
    knots(k) = std::max(1.0, pos);
  }
  return knots;
}

/// Parametric heteroscedastic generator. At each knot, S(x_k) is p x p with
/// iid N(0, Sigma_s) columns, Sigma_s = sum_j s_j s_j', s_j ~ N(r, I) where r
/// is the symmetric ramp -(p-1), -(p-3), ..., p-1. Each element of S is then
/// interpolated by a natural cubic spline over x = 1..n, and
/// Sigma(x) = alpha S(x) S(x)' + Sigma_0 with alpha setting the largest entry
/// of alpha S S' over the grid to 1.
inline SplineCovariance simulate_spline_covariance(Index p, Index n, Index n_knots,
                                                   RandomStream& rng) {
  if (n_knots < 2) throw std::invalid_argument("spline generator needs at least 2 knots");
  if (p < 1 || n < n_knots) throw std::invalid_argument("spline generator: bad p or n");
  Vector ramp(p);
  for (Index j = 0; j < p; ++j) ramp(j) = -static_cast<double>(p - 1) + 2.0 * static_cast<double>(j);
  Matrix sigma_s = Matrix::Zero(p, p);
  for (Index j = 0; j < p; ++j) {
    const Vector s = ramp + rng.normal_vector(p);
    sigma_s.noalias() += s * s.transpose();
  }
  const Matrix ls = chol_psd(sigma_s).lower;

  SplineCovariance out;
  out.knots = spline_knot_positions(n, n_knots);
  Matrix knot_values(n_knots, p * p);  // row k holds vec(S(x_k))
  for (Index k = 0; k < n_knots; ++k) {
    Matrix s(p, p);
    for (Index c = 0; c < p; ++c) s.col(c) = ls * rng.normal_vector(p);
    knot_values.row(k) = Eigen::Map<const Eigen::RowVectorXd>(s.data(), p * p);
  }
  const NaturalCubicSpline spline(out.knots, knot_values);

  out.xs.resize(n, 1);
  std::vector<Matrix> ss(n);
  double top = 0.0;
  for (Index i = 0; i < n; ++i) {
    out.xs(i, 0) = static_cast<double>(i + 1);
    const Eigen::RowVectorXd flat = spline(out.xs(i, 0));
    const Eigen::Map<const Matrix> s(flat.data(), p, p);
    ss[i] = outer_gram(s);
    top = std::max(top, ss[i].maxCoeff());
  }
  out.alpha = 1.0 / top;
  out.sigma0.resize(p);
  for (Index j = 0; j < p; ++j) out.sigma0(j) = rng.positive_normal();
  out.truth.sigmas.reserve(n);
  for (Index i = 0; i < n; ++i) {
    Matrix sig = out.alpha * ss[i];
    sig.diagonal() += out.sigma0;
    out.truth.sigmas.push_back(std::move(sig));
  }
  return out;
}

}  // namespace covreg
