#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "covreg/common.hpp"
#include "covreg/gp_kernel.hpp"

namespace covreg {

enum class MeanMode { zero_mean, latent_mean };

inline std::string to_string(MeanMode m) {
  return m == MeanMode::zero_mean ? "zero-mean" : "latent-mean";
}

inline MeanMode parse_mean_mode(const std::string& s) {
  if (s == "zero-mean" || s == "zero") return MeanMode::zero_mean;
  if (s == "latent-mean" || s == "latent") return MeanMode::latent_mean;
  throw std::invalid_argument("unknown mean mode '" + s + "'");
}

/// Gamma priors use shape/rate throughout.
struct Hyperparameters {
  double a1 = 2.0;
  double a2 = 2.0;
  double a_sigma = 1.0;
  double b_sigma = 0.1;
  Index L_star = 10;
  Index k_star = 10;
  KernelParams kernel{};

  void validate() const {
    if (!(a1 > 0.0) || !(a2 > 0.0)) throw std::invalid_argument("a1 and a2 must be positive");
    if (!(a_sigma > 0.0) || !(b_sigma > 0.0)) {
      throw std::invalid_argument("a_sigma and b_sigma must be positive");
    }
    if (L_star < 1 || k_star < 1) throw std::invalid_argument("truncations must be >= 1");
    kernel.validate();
  }
};

struct ShrinkageState {
  Matrix phi;    // p x L
  Vector delta;  // L
  Vector tau;    // L, running product of delta

  void recompute_tau() {
    tau.resize(delta.size());
    double acc = 1.0;
    for (Index h = 0; h < delta.size(); ++h) {
      acc *= delta(h);
      tau(h) = acc;
    }
  }

  /// Prior precision of theta(j, l): phi(j, l) * tau(l).
  Matrix precision() const { return phi * tau.asDiagonal(); }
};

/// Observations at n predictor points. Unobserved entries of y may hold any
/// value (NaN by convention) and are never read by the samplers.
struct Dataset {
  PredictorGrid xs;  // n x q
  Matrix y;          // n x p
  Mask observed;     // n x p

  Index n() const { return y.rows(); }
  Index p() const { return y.cols(); }
  Index q() const { return xs.cols(); }

  void validate() const {
    if (xs.rows() != y.rows()) throw DataError("dataset: predictor and response row counts differ");
    if (observed.rows() != y.rows() || observed.cols() != y.cols()) {
      throw DataError("dataset: mask shape differs from response shape");
    }
    for (Index i = 0; i < n(); ++i) {
      for (Index j = 0; j < p(); ++j) {
        if (observed(i, j) && !std::isfinite(y(i, j))) {
          throw DataError("dataset: observed entry (" + std::to_string(i) + "," +
                          std::to_string(j) + ") is not finite");
        }
      }
    }
    if (!xs.allFinite()) throw DataError("dataset: non-finite predictor");
  }

  /// Copy of y with every unobserved entry replaced by 0.
  Matrix y_zero_filled() const { return observed.select(y, Matrix::Zero(n(), p())); }

  Index observed_count() const { return observed.count(); }

  static Dataset complete(PredictorGrid xs, Matrix y) {
    Mask m = Mask::Constant(y.rows(), y.cols(), true);
    return Dataset{std::move(xs), std::move(y), std::move(m)};
  }
};

struct CovarianceTrajectory {
  std::vector<Matrix> sigmas;
  std::vector<Vector> mus;  // empty when the mean is not modelled

  Index size() const { return static_cast<Index>(sigmas.size()); }
  bool has_mean() const { return !mus.empty(); }
};

/// All latent quantities of one sweep.
///
/// xi stores the dictionary values at the observed predictors as an
/// (L*k) x n matrix: column i is xi(x_i) flattened column-major, so entry
/// (l + m * L, i) is xi_{lm}(x_i).
struct ModelState {
  Matrix theta;  // p x L
  Matrix xi;     // (L*k) x n
  Matrix eta;    // k x n; in latent-mean mode always psi + nu
  Matrix psi;    // k x n (latent-mean mode only)
  Matrix nu;     // k x n (latent-mean mode only)
  Vector sigma0; // p, the sigma_j^2
  ShrinkageState shrinkage;
  MeanMode mode = MeanMode::zero_mean;
  double kappa = 10.0;

  Index p() const { return theta.rows(); }
  Index L() const { return theta.cols(); }
  Index k() const { return eta.rows(); }
  Index n() const { return xi.cols(); }

  static Index xi_row(Index l, Index m, Index L) { return l + m * L; }

  Eigen::Map<const Matrix> xi_at(Index i) const { return {xi.col(i).data(), L(), k()}; }
  Eigen::Map<Matrix> xi_at(Index i) { return {xi.col(i).data(), L(), k()}; }

  /// Lambda(x_i) = Theta xi(x_i), p x k.
  Matrix loadings(Index i) const { return theta * xi_at(i); }

  void validate() const {
    const Index pp = p(), ll = L(), kk = k(), nn = n();
    if (xi.rows() != ll * kk) throw std::logic_error("state: xi rows != L*k");
    if (eta.cols() != nn) throw std::logic_error("state: eta columns != n");
    if (sigma0.size() != pp) throw std::logic_error("state: sigma0 length != p");
    if (!(sigma0.array() > 0.0).all()) throw std::logic_error("state: sigma0 must be positive");
    if (shrinkage.phi.rows() != pp || shrinkage.phi.cols() != ll) {
      throw std::logic_error("state: phi shape mismatch");
    }
    if (shrinkage.delta.size() != ll || shrinkage.tau.size() != ll) {
      throw std::logic_error("state: delta/tau length mismatch");
    }
    if (mode == MeanMode::latent_mean) {
      if (psi.rows() != kk || psi.cols() != nn || nu.rows() != kk || nu.cols() != nn) {
        throw std::logic_error("state: psi/nu shape mismatch");
      }
      if (((psi + nu) - eta).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + eta.cwiseAbs().maxCoeff())) {
        throw std::logic_error("state: eta != psi + nu");
      }
    }
    if (!theta.allFinite() || !xi.allFinite() || !eta.allFinite()) {
      throw NumericalError("state: non-finite entries");
    }
  }
};

}  // namespace covreg
