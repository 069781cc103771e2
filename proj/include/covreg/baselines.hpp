#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "covreg/archive.hpp"
#include "covreg/chain.hpp"
#include "covreg/common.hpp"
#include "covreg/diagnostics.hpp"
#include "covreg/gibbs.hpp"
#include "covreg/gp_kernel.hpp"
#include "covreg/model.hpp"
#include "covreg/model_core.hpp"
#include "covreg/random.hpp"

namespace covreg {

namespace detail {

inline Matrix spd_inverse(const Matrix& a, const char* what) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw NumericalError(std::string(what) + ": matrix not positive definite");
  Matrix inv = llt.solve(Matrix::Identity(a.rows(), a.cols()));
  return 0.5 * (inv + inv.transpose());
}

inline Matrix lower_factor(const Matrix& a, const char* what) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw NumericalError(std::string(what) + ": matrix not positive definite");
  return llt.matrixL();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Wishart matrix discounting

/// Filtered law Phi_t | y_1:t ~ W(h, D^-1), Phi_t = Sigma_t^-1.
struct DiscountState {
  double h = 0.0;
  Matrix D;
  double beta = 1.0;

  /// E[Phi_t | y_1:t] = h D^-1.
  Matrix precision_mean() const { return h * detail::spd_inverse(D, "discount state"); }
};

/// beta must exceed (p - 2) / (p - 1) so that h_t stays above p - 1.
inline void check_discount_factor(double beta, Index p) {
  const double lo = p > 1 ? static_cast<double>(p - 2) / static_cast<double>(p - 1) : 0.0;
  if (!(beta > lo && beta <= 1.0)) {
    throw std::invalid_argument("discount factor beta = " + std::to_string(beta) + " must lie in (" +
                                std::to_string(lo) + ", 1]");
  }
}

/// D_t = beta D_{t-1} + y_t y_t', h_t = beta h_{t-1} + 1 for t = 1..T (rows of ys).
inline std::vector<DiscountState> mdw_forward_filter(const Matrix& ys, double beta, double h0, const Matrix& d0) {
  const Index p = ys.cols();
  check_discount_factor(beta, p);
  if (d0.rows() != p || d0.cols() != p) throw std::invalid_argument("mdw: D0 shape mismatch");
  if (!(h0 > static_cast<double>(p - 1))) throw std::invalid_argument("mdw: h0 must exceed p - 1");
  if (!ys.allFinite()) throw DataError("mdw: missing or non-finite observations are unsupported");
  std::vector<DiscountState> out;
  out.reserve(static_cast<std::size_t>(ys.rows()));
  double h = h0;
  Matrix d = d0;
  for (Index t = 0; t < ys.rows(); ++t) {
    h = beta * h + 1.0;
    d *= beta;
    d.selfadjointView<Eigen::Lower>().rankUpdate(ys.row(t).transpose());
    d.triangularView<Eigen::StrictlyUpper>() = d.transpose();
    out.push_back({h, d, beta});
  }
  return out;
}

inline std::vector<DiscountState> mdw_forward_filter(const Dataset& data, double beta, double h0, const Matrix& d0) {
  if (!data.observed.all()) throw DataError("mdw: missing entries are unsupported (use a pre-fill)");
  return mdw_forward_filter(data.y, beta, h0, d0);
}

/// Phi_T ~ W(h_T, D_T^-1); Phi_t = beta Phi_{t+1} + Upsilon_t with
/// Upsilon_t ~ W((1 - beta) h_t, D_t^-1). Returns Sigma_t = Phi_t^-1.
inline CovarianceTrajectory mdw_backward_sample(const std::vector<DiscountState>& filtered, RandomStream& rng) {
  if (filtered.empty()) throw std::invalid_argument("mdw_backward_sample: empty filtered sequence");
  const Index T = static_cast<Index>(filtered.size());
  CovarianceTrajectory out;
  out.sigmas.resize(static_cast<std::size_t>(T));
  const DiscountState& last = filtered.back();
  Matrix phi = wishart_draw(last.h, detail::lower_factor(detail::spd_inverse(last.D, "mdw D_T"), "mdw"), rng);
  out.sigmas[static_cast<std::size_t>(T - 1)] = detail::spd_inverse(phi, "mdw Phi_T");
  for (Index t = T - 2; t >= 0; --t) {
    const DiscountState& st = filtered[static_cast<std::size_t>(t)];
    const double dof = (1.0 - st.beta) * st.h;
    phi *= st.beta;
    if (dof > 0.0) {
      phi += wishart_draw(dof, detail::lower_factor(detail::spd_inverse(st.D, "mdw D_t"), "mdw"), rng);
    }
    out.sigmas[static_cast<std::size_t>(t)] = detail::spd_inverse(phi, "mdw Phi_t");
  }
  return out;
}

struct MdwConfig {
  double h0 = 40.0;
  double beta = -1.0;   // negative selects 1 - 1 / h0
  Matrix D0;            // empty selects h0 * I
  Index n_draws = 100;
  std::uint64_t seed = 1;

  double resolved_beta() const { return beta < 0.0 ? 1.0 - 1.0 / h0 : beta; }
  Matrix resolved_d0(Index p) const { return D0.size() == 0 ? Matrix(h0 * Matrix::Identity(p, p)) : D0; }

  nlohmann::json to_json() const {
    return {{"h0", h0}, {"beta", resolved_beta()}, {"n_draws", n_draws}, {"seed", seed},
            {"D0", D0.size() == 0 ? "h0*I" : "custom"}};
  }
};

/// n_draws independent FFBS trajectories over the rows of a complete dataset.
inline PosteriorArchive mdw_ffbs(const Dataset& data, const MdwConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const double beta = cfg.resolved_beta();
  const std::vector<DiscountState> filtered = mdw_forward_filter(data, beta, cfg.h0, cfg.resolved_d0(data.p()));
  log(LogLevel::info, "mdw: beta = " + std::to_string(beta) + ", h0 = " + std::to_string(cfg.h0));
  RandomStream rng(cfg.seed);
  PosteriorArchive a;
  a.model = "mdw";
  a.n = data.n();
  a.p = data.p();
  for (Index m = 0; m < cfg.n_draws; ++m) a.append(mdw_backward_sample(filtered, rng), m + 1);
  a.manifest = {{"model", a.model},
                {"mdw", cfg.to_json()},
                {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
  return a;
}

// ---------------------------------------------------------------------------
// Homoscedastic baselines

/// Sigma ~ IW(dof, scale), E[Sigma] = scale / (dof - p - 1).
struct InverseWishartPrior {
  double dof = -1.0;  // negative selects p + 2
  Matrix scale;       // empty selects I

  double resolved_dof(Index p) const { return dof < 0.0 ? static_cast<double>(p + 2) : dof; }
  Matrix resolved_scale(Index p) const { return scale.size() == 0 ? Matrix(Matrix::Identity(p, p)) : scale; }
};

struct InverseWishartParams {
  double dof;
  Matrix scale;
};

/// Conjugate update with residual rows R: IW(dof + n, scale + R'R).
inline InverseWishartParams inverse_wishart_update(const InverseWishartPrior& prior, const Matrix& residuals) {
  const Index p = residuals.cols();
  Matrix s = prior.resolved_scale(p);
  s.selfadjointView<Eigen::Lower>().rankUpdate(residuals.transpose());
  s.triangularView<Eigen::StrictlyUpper>() = s.transpose();
  return {prior.resolved_dof(p) + static_cast<double>(residuals.rows()), s};
}

inline Matrix sample_inverse_wishart(const InverseWishartParams& iw, RandomStream& rng) {
  const Matrix w = wishart_draw(iw.dof, detail::lower_factor(detail::spd_inverse(iw.scale, "IW scale"), "IW"), rng);
  return detail::spd_inverse(w, "IW draw");
}

struct HomoscedasticConfig {
  Index n_iterations = 10000;
  Index burn_in = 5000;
  Index thin = 10;
  std::uint64_t seed = 1;
  bool impute = false;
  InverseWishartPrior iw{};
  std::optional<Matrix> fixed_sigma;  // hold Sigma at a known value

  void validate() const {
    if (n_iterations < 1 || burn_in < 0 || burn_in >= n_iterations || thin < 1) {
      throw std::invalid_argument("homoscedastic: invalid iteration bookkeeping");
    }
  }

  static HomoscedasticConfig from_chain(const ChainConfig& c) {
    HomoscedasticConfig h;
    h.n_iterations = c.n_iterations;
    h.burn_in = c.burn_in;
    h.thin = c.thin;
    h.seed = c.seed;
    h.impute = c.impute;
    return h;
  }

  nlohmann::json to_json() const {
    return {{"n_iterations", n_iterations}, {"burn_in", burn_in}, {"thin", thin}, {"seed", seed},
            {"impute", impute}, {"iw_dof", iw.dof < 0.0 ? "p+2" : std::to_string(iw.dof)},
            {"iw_scale", iw.scale.size() == 0 ? "I" : "custom"}, {"fixed_sigma", fixed_sigma.has_value()}};
  }
};

namespace detail {

inline void require_complete_or_impute(const Dataset& data, bool impute, const char* model) {
  if (!impute && !data.observed.all()) {
    throw DataError(std::string(model) + ": missing entries need the imputation toggle");
  }
}

/// Redraws the unobserved entries of row i of y from N(mu, Sigma) given the observed ones.
inline void impute_rows(const Dataset& data, const Matrix& means, const Matrix& sigma, Matrix& y,
                        RandomStream& rng) {
  for (Index i = 0; i < data.n(); ++i) {
    std::vector<Index> obs;
    for (Index j = 0; j < data.p(); ++j) {
      if (data.observed(i, j)) obs.push_back(j);
    }
    if (static_cast<Index>(obs.size()) == data.p()) continue;
    Vector vals(static_cast<Index>(obs.size()));
    for (std::size_t a = 0; a < obs.size(); ++a) vals(static_cast<Index>(a)) = data.y(i, obs[a]);
    const GaussianPredictive g = conditional_predictive(means.row(i).transpose(), sigma, obs, vals);
    const Vector draw = sample_predictive(g, rng);
    for (std::size_t a = 0; a < g.index_map.size(); ++a) y(i, g.index_map[a]) = draw(static_cast<Index>(a));
  }
}

inline CovarianceTrajectory constant_trajectory(const Matrix& means, const Matrix& sigma) {
  CovarianceTrajectory t;
  for (Index i = 0; i < means.rows(); ++i) {
    t.sigmas.push_back(sigma);
    t.mus.push_back(means.row(i).transpose());
  }
  return t;
}

}  // namespace detail

/// y_i ~ N(mu(x_i), Sigma) with independent mu_j ~ GP(0, c) and Sigma ~ IW.
inline PosteriorArchive fit_homoscedastic_gp_mean(const Dataset& data, const KernelParams& kernel,
                                                  const HomoscedasticConfig& cfg) {
  cfg.validate();
  data.validate();
  detail::require_complete_or_impute(data, cfg.impute, "homo-gp");
  const auto t0 = std::chrono::steady_clock::now();
  const Index n = data.n(), p = data.p();
  const GpPrior gp = GpPrior::build(data.xs, kernel);
  RandomStream rng(cfg.seed);

  Matrix y = data.y_zero_filled();
  Matrix mu = Matrix::Zero(n, p);
  Matrix sigma = cfg.fixed_sigma.value_or(Matrix(Matrix::Identity(p, p)));

  PosteriorArchive a;
  a.model = "homo-gp";
  a.n = n;
  a.p = p;
  Vector d(n), b(n);
  for (Index it = 1; it <= cfg.n_iterations; ++it) {
    if (cfg.impute) detail::impute_rows(data, mu, sigma, y, rng);
    const Matrix lambda = detail::spd_inverse(sigma, "homo-gp Sigma");
    for (Index j = 0; j < p; ++j) {
      const Vector proj = (y - mu) * lambda.col(j);
      for (Index i = 0; i < n; ++i) {
        d(i) = lambda(j, j);
        b(i) = proj(i) + lambda(j, j) * mu(i, j);
      }
      mu.col(j) = sample_gp_conditional(gp, d, b, rng);
    }
    if (!cfg.fixed_sigma) sigma = sample_inverse_wishart(inverse_wishart_update(cfg.iw, y - mu), rng);
    if (it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) {
      a.append(detail::constant_trajectory(mu, sigma), it);
    }
  }
  a.manifest = {{"model", a.model},
                {"chain", cfg.to_json()},
                {"kappa", kernel.kappa},
                {"nugget", kernel.nugget},
                {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
  return a;
}

/// Mean Theta xi(x) psi(x) as in the main model, constant Sigma ~ IW.
/// The state reuses ModelState with eta = psi and nu = 0.
inline PosteriorArchive fit_homoscedastic_latent_factor(const Dataset& data, const Hyperparameters& hyper,
                                                        const HomoscedasticConfig& cfg) {
  cfg.validate();
  hyper.validate();
  data.validate();
  detail::require_complete_or_impute(data, cfg.impute, "homo-lf");
  const auto t0 = std::chrono::steady_clock::now();
  const Index n = data.n(), p = data.p(), L = hyper.L_star, k = hyper.k_star;
  const GpPrior gp = GpPrior::build(data.xs, hyper.kernel);
  RandomStream rng(cfg.seed);

  ModelState s = sample_prior(hyper, gp, p, MeanMode::latent_mean, rng);
  s.nu.setZero();
  s.eta = s.psi;
  Matrix sigma = cfg.fixed_sigma.value_or(Matrix(Matrix::Identity(p, p)));
  Matrix y = data.y_zero_filled();

  auto fitted = [&]() -> Matrix { return detail::factor_scores(s) * s.theta.transpose(); };

  PosteriorArchive a;
  a.model = "homo-lf";
  a.n = n;
  a.p = p;
  Vector d(n), b(n);
  for (Index it = 1; it <= cfg.n_iterations; ++it) {
    if (cfg.impute) detail::impute_rows(data, fitted(), sigma, y, rng);
    const Matrix lambda = detail::spd_inverse(sigma, "homo-lf Sigma");

    // dictionary functions
    Matrix resid = y - fitted();
    for (Index l = 0; l < L; ++l) {
      const Vector u = lambda * s.theta.col(l);
      const double q = s.theta.col(l).dot(u);
      Vector resid_u = resid * u;
      for (Index m = 0; m < k; ++m) {
        const Index r = ModelState::xi_row(l, m, L);
        for (Index i = 0; i < n; ++i) {
          const double e = s.eta(m, i);
          d(i) = e * e * q;
          b(i) = e * resid_u(i) + s.xi(r, i) * d(i);
        }
        const Vector fresh = sample_gp_conditional(gp, d, b, rng);
        const Vector change = (fresh - s.xi.row(r).transpose()).cwiseProduct(s.eta.row(m).transpose());
        s.xi.row(r) = fresh.transpose();
        resid.noalias() -= change * s.theta.col(l).transpose();
        resid_u.noalias() = resid * u;
      }
    }

    // psi(.): per-row G_i = Omega' Lambda Omega and h_i = Omega' Lambda y_i
    std::vector<Matrix> g(static_cast<std::size_t>(n));
    Matrix h(k, n);
    for (Index i = 0; i < n; ++i) {
      const Matrix omega = s.loadings(i);
      const Matrix lo = lambda * omega;
      g[static_cast<std::size_t>(i)] = omega.transpose() * lo;
      h.col(i) = lo.transpose() * y.row(i).transpose();
    }
    for (Index l = 0; l < k; ++l) {
      for (Index i = 0; i < n; ++i) {
        const Matrix& gi = g[static_cast<std::size_t>(i)];
        d(i) = std::max(gi(l, l), 0.0);
        b(i) = h(l, i) - gi.row(l).dot(s.psi.col(i)) + gi(l, l) * s.psi(l, i);
      }
      s.psi.row(l) = sample_gp_conditional(gp, d, b, rng).transpose();
    }
    s.eta = s.psi;

    // Theta jointly: precision (W'W kron Lambda) + diag(phi tau), W rows xi(x_i) psi_i
    {
      const Matrix w = detail::factor_scores(s);
      const Matrix wtw = outer_gram(w.transpose());
      Matrix prec(p * L, p * L);
      for (Index l = 0; l < L; ++l) {
        for (Index l2 = 0; l2 < L; ++l2) prec.block(l * p, l2 * p, p, p) = wtw(l, l2) * lambda;
      }
      const Matrix shrink = s.shrinkage.precision();
      for (Index l = 0; l < L; ++l) {
        for (Index j = 0; j < p; ++j) prec(l * p + j, l * p + j) += shrink(j, l);
      }
      const Matrix hm = lambda * y.transpose() * w;  // p x L
      const Vector hv = Eigen::Map<const Vector>(hm.data(), p * L);
      const Vector th = sample_from_precision(prec, hv, rng);
      s.theta = Eigen::Map<const Matrix>(th.data(), p, L);
    }

    step_phi(s, rng);
    step_delta(s, hyper, rng);
    if (!cfg.fixed_sigma) sigma = sample_inverse_wishart(inverse_wishart_update(cfg.iw, y - fitted()), rng);

    if (it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) {
      a.append(detail::constant_trajectory(fitted(), sigma), it);
    }
  }
  a.manifest = {{"model", a.model},
                {"chain", cfg.to_json()},
                {"hyper", to_json(hyper)},
                {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
  return a;
}

}  // namespace covreg
