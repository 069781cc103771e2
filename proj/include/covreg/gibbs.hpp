#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "covreg/common.hpp"
#include "covreg/gp_kernel.hpp"
#include "covreg/model.hpp"
#include "covreg/model_core.hpp"
#include "covreg/random.hpp"

namespace covreg {

/// Gram matrix and factor for the current kappa; rebuilt only when kappa changes.
class SamplerWorkspace {
 public:
  SamplerWorkspace(PredictorGrid xs, KernelParams params) : xs_(std::move(xs)), params_(params) {}

  const GpPrior& prior(double kappa) {
    if (!cache_ || kappa != params_.kappa) {
      params_.kappa = kappa;
      cache_ = GpPrior::build(xs_, params_);
    }
    return *cache_;
  }

  const PredictorGrid& xs() const { return xs_; }
  const KernelParams& kernel() const { return params_; }

 private:
  PredictorGrid xs_;
  KernelParams params_;
  std::optional<GpPrior> cache_;
};

/// x ~ N(P^-1 h, P^-1) through the Cholesky factor of the precision P.
inline Vector sample_from_precision(const Matrix& precision, const Vector& h, RandomStream& rng) {
  const CholeskyFactor f = chol_psd(precision);
  const auto l = f.lower.triangularView<Eigen::Lower>();
  Vector mean = l.solve(h);
  mean = l.transpose().solve(mean);
  const Vector z = rng.normal_vector(h.size());
  return mean + l.transpose().solve(z);
}

/// I + G' G, exactly symmetric.
inline Matrix identity_plus_gram(const Matrix& g) {
  Matrix p = Matrix::Identity(g.cols(), g.cols());
  p.selfadjointView<Eigen::Lower>().rankUpdate(g.transpose());
  p.triangularView<Eigen::StrictlyUpper>() = p.transpose();
  return p;
}

namespace detail {

inline Matrix mask_as_double(const Mask& m) { return m.cast<double>().matrix(); }

/// n x L matrix whose row i is (xi(x_i) eta_i)'.
inline Matrix factor_scores(const ModelState& s) {
  Matrix w(s.n(), s.L());
  for (Index i = 0; i < s.n(); ++i) w.row(i) = (s.xi_at(i) * s.eta.col(i)).transpose();
  return w;
}

inline std::vector<Index> observed_columns(const Mask& obs, Index i) {
  std::vector<Index> idx;
  for (Index j = 0; j < obs.cols(); ++j) {
    if (obs(i, j)) idx.push_back(j);
  }
  return idx;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Step 1: dictionary functions

/// Redraws every xi_{lm}(.) in row-major (l, m) order, each conditional on the rest.
inline void step_xi(ModelState& s, const Dataset& data, const GpPrior& gp, RandomStream& rng) {
  const Index n = s.n(), p = s.p(), L = s.L(), k = s.k();
  if (data.n() != n || data.p() != p || gp.size() != n) {
    throw std::invalid_argument("step_xi: dimension mismatch");
  }
  const Matrix md = detail::mask_as_double(data.observed);
  const Matrix y0 = data.y_zero_filled();
  // Residual over observed entries, zero elsewhere.
  Matrix resid = (y0 - detail::factor_scores(s) * s.theta.transpose()).cwiseProduct(md);
  const Vector prec = s.sigma0.cwiseInverse();

  Vector d(n), b(n);
  for (Index l = 0; l < L; ++l) {
    const Vector u = s.theta.col(l).cwiseProduct(prec);               // theta_jl / sigma_j^2
    const Vector w2 = s.theta.col(l).cwiseProduct(u);                 // theta_jl^2 / sigma_j^2
    const Vector obs_w2 = md * w2;                                    // per-row observed sum
    Vector resid_u = resid * u;
    for (Index m = 0; m < k; ++m) {
      const Index r = ModelState::xi_row(l, m, L);
      for (Index i = 0; i < n; ++i) {
        const double e = s.eta(m, i);
        d(i) = e * e * obs_w2(i);
        b(i) = e * resid_u(i) + s.xi(r, i) * d(i);
      }
      const Vector fresh = sample_gp_conditional(gp, d, b, rng);
      const Vector change = fresh - s.xi.row(r).transpose();
      s.xi.row(r) = fresh.transpose();
      // resid_ij -= theta_jl eta_im change_i on observed entries.
      const Vector scale = change.cwiseProduct(s.eta.row(m).transpose());
      resid.noalias() -= (scale * s.theta.col(l).transpose()).cwiseProduct(md);
      resid_u.noalias() = resid * u;
    }
  }
}

// ---------------------------------------------------------------------------
// Step 2: latent factors (zero-mean mode)

inline void step_eta(ModelState& s, const Dataset& data, RandomStream& rng) {
  const Index n = s.n(), k = s.k();
  if (data.n() != n || data.p() != s.p()) throw std::invalid_argument("step_eta: dimension mismatch");
  for (Index i = 0; i < n; ++i) {
    const std::vector<Index> obs = detail::observed_columns(data.observed, i);
    if (obs.empty()) {
      s.eta.col(i) = rng.normal_vector(k);
      continue;
    }
    const Matrix lambda = s.loadings(i);
    const Index po = static_cast<Index>(obs.size());
    Matrix g(po, k);
    Vector h = Vector::Zero(k);
    for (Index a = 0; a < po; ++a) {
      const Index j = obs[a];
      const double sd = std::sqrt(s.sigma0(j));
      g.row(a) = lambda.row(j) / sd;
      h += lambda.row(j).transpose() * (data.y(i, j) / s.sigma0(j));
    }
    s.eta.col(i) = sample_from_precision(identity_plus_gram(g), h, rng);
  }
}

// ---------------------------------------------------------------------------
// Step 3: idiosyncratic noise

inline void step_sigma0(ModelState& s, const Dataset& data, const Hyperparameters& hyper,
                        RandomStream& rng) {
  const Index n = s.n(), p = s.p();
  if (data.n() != n || data.p() != p) throw std::invalid_argument("step_sigma0: dimension mismatch");
  const Matrix fitted = detail::factor_scores(s) * s.theta.transpose();
  for (Index j = 0; j < p; ++j) {
    double ssr = 0.0;
    Index nj = 0;
    for (Index i = 0; i < n; ++i) {
      if (!data.observed(i, j)) continue;
      const double r = data.y(i, j) - fitted(i, j);
      ssr += r * r;
      ++nj;
    }
    const double shape = hyper.a_sigma + 0.5 * static_cast<double>(nj);
    const double rate = hyper.b_sigma + 0.5 * ssr;
    s.sigma0(j) = 1.0 / rng.gamma(shape, rate);
  }
}

// ---------------------------------------------------------------------------
// Step 4: loadings

inline void step_theta(ModelState& s, const Dataset& data, RandomStream& rng) {
  const Index n = s.n(), p = s.p(), L = s.L();
  if (data.n() != n || data.p() != p) throw std::invalid_argument("step_theta: dimension mismatch");
  const Matrix w = detail::factor_scores(s);
  std::optional<Matrix> full_gram;
  for (Index j = 0; j < p; ++j) {
    const double prec = 1.0 / s.sigma0(j);
    Matrix gram;
    Vector h = Vector::Zero(L);
    if (data.observed.col(j).all()) {
      if (!full_gram) full_gram = outer_gram(w.transpose());
      gram = *full_gram;
      h = w.transpose() * data.y.col(j);
    } else {
      gram = Matrix::Zero(L, L);
      for (Index i = 0; i < n; ++i) {
        if (!data.observed(i, j)) continue;
        gram.selfadjointView<Eigen::Lower>().rankUpdate(w.row(i).transpose());
        h += w.row(i).transpose() * data.y(i, j);
      }
      gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
    }
    Matrix precision = prec * gram;
    precision.diagonal() += s.shrinkage.phi.row(j).transpose().cwiseProduct(s.shrinkage.tau);
    s.theta.row(j) = sample_from_precision(precision, prec * h, rng).transpose();
  }
}

// ---------------------------------------------------------------------------
// Steps 5 and 6: shrinkage

inline void step_phi(ModelState& s, RandomStream& rng) {
  const Matrix& theta = s.theta;
  for (Index l = 0; l < s.L(); ++l) {
    for (Index j = 0; j < s.p(); ++j) {
      const double t2 = theta(j, l) * theta(j, l);
      s.shrinkage.phi(j, l) = rng.gamma(2.0, 0.5 * (3.0 + s.shrinkage.tau(l) * t2));
    }
  }
}

/// Sequential delta_h updates. For h >= 2 only columns l >= h carry delta_h,
/// so the rate sums over l >= h; tau is refreshed after each draw.
inline void step_delta(ModelState& s, const Hyperparameters& hyper, RandomStream& rng) {
  const Index p = s.p(), L = s.L();
  ShrinkageState& sh = s.shrinkage;
  // column sums of phi * theta^2
  const Vector col = sh.phi.cwiseProduct(s.theta.cwiseProduct(s.theta)).colwise().sum().transpose();
  for (Index h = 0; h < L; ++h) {
    double acc = 0.0;
    for (Index l = h; l < L; ++l) acc += sh.tau(l) / sh.delta(h) * col(l);
    const double a = h == 0 ? hyper.a1 : hyper.a2;
    const double shape = a + 0.5 * static_cast<double>(p * (L - h));
    sh.delta(h) = rng.gamma(shape, 1.0 + 0.5 * acc);
    sh.recompute_tau();
  }
}

// ---------------------------------------------------------------------------
// Latent-mean block: psi(.) and nu

inline void step_psi_nu(ModelState& s, const Dataset& data, const GpPrior& gp, RandomStream& rng) {
  if (s.mode != MeanMode::latent_mean) throw std::logic_error("step_psi_nu needs latent-mean mode");
  const Index n = s.n(), k = s.k();
  if (data.n() != n || data.p() != s.p() || gp.size() != n) {
    throw std::invalid_argument("step_psi_nu: dimension mismatch");
  }
  // Per row: P_i = I + Omega' S^-1 Omega, a_i = P_i^-1 Omega' S^-1 y_i, Q_i = I - P_i^-1.
  Matrix a = Matrix::Zero(k, n);
  std::vector<Matrix> q(n);
  std::vector<Matrix> chol(n);
  for (Index i = 0; i < n; ++i) {
    const std::vector<Index> obs = detail::observed_columns(data.observed, i);
    if (obs.empty()) {
      q[i] = Matrix::Zero(k, k);
      chol[i] = Matrix::Identity(k, k);
      continue;
    }
    const Matrix omega = s.loadings(i);
    const Index po = static_cast<Index>(obs.size());
    Matrix g(po, k);
    Vector h = Vector::Zero(k);
    for (Index r = 0; r < po; ++r) {
      const Index j = obs[r];
      g.row(r) = omega.row(j) / std::sqrt(s.sigma0(j));
      h += omega.row(j).transpose() * (data.y(i, j) / s.sigma0(j));
    }
    const CholeskyFactor f = chol_psd(identity_plus_gram(g));
    const auto l = f.lower.triangularView<Eigen::Lower>();
    Matrix pinv = l.solve(Matrix::Identity(k, k));
    pinv = l.transpose().solve(pinv);
    a.col(i) = pinv * h;
    q[i] = Matrix::Identity(k, k) - pinv;
    chol[i] = f.lower;
  }

  Vector d(n), b(n);
  for (Index l = 0; l < k; ++l) {
    for (Index i = 0; i < n; ++i) {
      const double qll = q[i](l, l);
      d(i) = std::max(qll, 0.0);
      b(i) = a(l, i) - q[i].row(l).dot(s.psi.col(i)) + qll * s.psi(l, i);
    }
    s.psi.row(l) = sample_gp_conditional(gp, d, b, rng).transpose();
  }
  for (Index i = 0; i < n; ++i) {
    const Vector mean = a.col(i) - q[i] * s.psi.col(i);
    const Vector z = rng.normal_vector(k);
    s.nu.col(i) = mean + chol[i].triangularView<Eigen::Lower>().transpose().solve(z);
  }
  s.eta = s.psi + s.nu;
}

// ---------------------------------------------------------------------------
// Imputation

/// Fills every unobserved entry of `work` from N(theta_j. xi(x_i) eta_i, sigma_j^2)
/// and copies the observed entries of `data`.
inline void impute_missing(const ModelState& s, const Dataset& data, Matrix& work,
                           RandomStream& rng) {
  const Matrix fitted = detail::factor_scores(s) * s.theta.transpose();
  work.resize(data.n(), data.p());
  for (Index j = 0; j < data.p(); ++j) {
    for (Index i = 0; i < data.n(); ++i) {
      if (data.observed(i, j)) {
        work(i, j) = data.y(i, j);
      } else {
        work(i, j) = fitted(i, j) + std::sqrt(s.sigma0(j)) * rng.normal();
      }
    }
  }
}

// ---------------------------------------------------------------------------
// kappa on a grid with the dictionary functions integrated out

struct KappaGridOptions {
  Index max_dimension = 2000;  // cap on the number of observed entries
};

/// log N(y_obs; 0, C(kappa)) for each kappa with
/// C[(i,j),(i',j')] = K_ii' (eta_i . eta_i') (Theta Theta')_jj' + sigma_j^2 [same entry].
inline Vector kappa_grid_logmarginal(const ModelState& s, const Dataset& data, const Vector& grid,
                                     const KernelParams& base, const KappaGridOptions& opts = {}) {
  if (grid.size() == 0) throw std::invalid_argument("kappa grid is empty");
  const Index n = data.n(), p = data.p();
  if (s.n() != n || s.p() != p) throw std::invalid_argument("kappa_grid_logmarginal: dimension mismatch");
  std::vector<std::pair<Index, Index>> entries;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) {
      if (data.observed(i, j)) entries.emplace_back(i, j);
    }
  }
  const Index d = static_cast<Index>(entries.size());
  if (d > opts.max_dimension) {
    throw CapacityError("kappa grid marginal needs a " + std::to_string(d) + "-dimensional Gaussian; cap is " +
                        std::to_string(opts.max_dimension));
  }
  Vector yv(d);
  for (Index a = 0; a < d; ++a) yv(a) = data.y(entries[a].first, entries[a].second);
  const Matrix etagram = s.eta.transpose() * s.eta;  // n x n
  const Matrix tt = s.theta * s.theta.transpose();    // p x p
  constexpr double kLog2Pi = 1.8378770664093453;

  Vector out(grid.size());
  for (Index g = 0; g < grid.size(); ++g) {
    KernelParams kp = base;
    kp.kappa = grid(g);
    const Matrix kmat = gram_matrix(data.xs, kp).values;
    Matrix c(d, d);
    for (Index a = 0; a < d; ++a) {
      const auto [i, j] = entries[a];
      for (Index b = 0; b <= a; ++b) {
        const auto [i2, j2] = entries[b];
        const double v = kmat(i, i2) * etagram(i, i2) * tt(j, j2);
        c(a, b) = v;
        c(b, a) = v;
      }
      c(a, a) += s.sigma0(j);
    }
    const CholeskyFactor f = chol_psd(c);
    const Vector z = f.lower.triangularView<Eigen::Lower>().solve(yv);
    const double logdet = 2.0 * f.lower.diagonal().array().log().sum();
    out(g) = -0.5 * (static_cast<double>(d) * kLog2Pi + logdet + z.squaredNorm());
  }
  return out;
}

/// Draws a grid index with probability proportional to prior weight times marginal likelihood.
inline double sample_kappa_grid(const ModelState& s, const Dataset& data, const Vector& grid,
                                const Vector& prior_weights, const KernelParams& base,
                                RandomStream& rng, const KappaGridOptions& opts = {}) {
  if (prior_weights.size() != grid.size()) throw std::invalid_argument("kappa grid: weight count mismatch");
  if (!(prior_weights.array() > 0.0).all()) throw std::invalid_argument("kappa grid: weights must be positive");
  const Vector lp = kappa_grid_logmarginal(s, data, grid, base, opts) + prior_weights.array().log().matrix();
  return grid(rng.categorical_log(lp));
}

}  // namespace covreg
