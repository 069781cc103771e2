#pragma once

#include <vector>

#include "covreg/common.hpp"
#include "covreg/gibbs.hpp"
#include "covreg/kappa.hpp"
#include "covreg/model.hpp"
#include "covreg/model_core.hpp"
#include "covreg/spline.hpp"

namespace covreg {

struct DataDrivenInitOptions {
  Index n_knots = 20;
  Index bin_halfwidth = -1;  // -1 selects floor(p/2) + 1
  Index warmup_cycles = 3;
};

namespace detail {

/// Rank-k factor U_k S_k of a square root C, so that F F' is the best rank-k
/// approximation of C C'. Columns beyond rank p are zero.
inline Matrix low_rank_factor(const Matrix& c, Index k) {
  const Index p = c.rows();
  Eigen::JacobiSVD<Matrix> svd(c, Eigen::ComputeFullU);
  Matrix f = Matrix::Zero(p, k);
  const Index r = std::min(p, k);
  f.leftCols(r) = svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal();
  return f;
}

/// xi(x_i) from a spline through pinv(Theta) Lambda(x_k) at the knots.
inline void xi_from_knot_loadings(ModelState& s, const Dataset& data, const std::vector<Index>& knot_rows,
                                  const std::vector<Matrix>& lambda) {
  const Index L = s.L(), k = s.k();
  const Matrix pinv = s.theta.completeOrthogonalDecomposition().pseudoInverse();
  const Index nk = static_cast<Index>(knot_rows.size());
  Vector kx(nk);
  Matrix vals(nk, L * k);
  for (Index a = 0; a < nk; ++a) {
    const Index row = knot_rows[a];
    kx(a) = data.xs(row, 0);
    const Matrix xi = pinv * lambda[row];
    vals.row(a) = Eigen::Map<const Eigen::RowVectorXd>(xi.data(), L * k);
  }
  const NaturalCubicSpline spline(kx, vals);
  for (Index i = 0; i < data.n(); ++i) s.xi.col(i) = spline(data.xs(i, 0)).transpose();
}

}  // namespace detail

/// Initial state built from a smoothed local covariance estimate: Theta,
/// Sigma_0 and shrinkage come from the prior, eta from the Step-2 posterior
/// under the low-rank loadings, and xi from splines of pinv(Theta) Lambda at
/// the knots; followed by a few xi / Theta / Sigma_0 warm-up cycles.
inline ModelState data_driven_init(const Dataset& data, const Hyperparameters& hyper, const GpPrior& gp,
                                   MeanMode mode, RandomStream& rng, const DataDrivenInitOptions& opts = {}) {
  hyper.validate();
  const Index n = data.n(), p = data.p(), L = hyper.L_star, k = hyper.k_star;
  const Index k0 = opts.bin_halfwidth < 0 ? p / 2 + 1 : opts.bin_halfwidth;
  const LocalCovarianceEstimate est = local_covariance_estimate(data, opts.n_knots, k0);

  ModelState s;
  s.mode = mode;
  s.kappa = gp.gram.params.kappa;
  s.shrinkage = sample_shrinkage_prior(p, L, hyper.a1, hyper.a2, rng);
  s.theta = sample_theta_prior(s.shrinkage, rng);
  s.sigma0 = sample_sigma0_prior(p, hyper.a_sigma, hyper.b_sigma, rng);
  s.xi = Matrix::Zero(L * k, n);
  s.eta.resize(k, n);

  std::vector<Matrix> lambda(n);
  for (Index i = 0; i < n; ++i) lambda[i] = detail::low_rank_factor(est.chol_path[i], k);

  // eta_i | y_i under Lambda_i = lambda[i].
  for (Index i = 0; i < n; ++i) {
    const std::vector<Index> obs = detail::observed_columns(data.observed, i);
    if (obs.empty()) {
      s.eta.col(i) = rng.normal_vector(k);
      continue;
    }
    Matrix g(static_cast<Index>(obs.size()), k);
    Vector h = Vector::Zero(k);
    for (std::size_t a = 0; a < obs.size(); ++a) {
      const Index j = obs[a];
      g.row(static_cast<Index>(a)) = lambda[i].row(j) / std::sqrt(s.sigma0(j));
      h += lambda[i].row(j).transpose() * (data.y(i, j) / s.sigma0(j));
    }
    s.eta.col(i) = sample_from_precision(identity_plus_gram(g), h, rng);
  }

  detail::xi_from_knot_loadings(s, data, est.knot_rows, lambda);
  for (Index c = 0; c < opts.warmup_cycles; ++c) {
    step_xi(s, data, gp, rng);
    step_theta(s, data, rng);
    step_sigma0(s, data, hyper, rng);
    detail::xi_from_knot_loadings(s, data, est.knot_rows, lambda);
  }

  if (mode == MeanMode::latent_mean) {
    s.psi = Matrix::Zero(k, n);
    s.nu = s.eta;
  }
  s.validate();
  return s;
}

}  // namespace covreg
