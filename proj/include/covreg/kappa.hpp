#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "covreg/common.hpp"
#include "covreg/gp_kernel.hpp"
#include "covreg/model.hpp"
#include "covreg/model_core.hpp"
#include "covreg/spline.hpp"

namespace covreg {

/// Smoothed local covariance estimate: bin sample covariances at evenly
/// spaced knots, Cholesky per knot, a spline through every Cholesky entry,
/// and Sigma_hat(x_i) = C(x_i) C(x_i)'.
struct LocalCovarianceEstimate {
  std::vector<Index> knot_rows;     // row index of each knot
  std::vector<Matrix> knot_chol;    // lower factors at the knots
  std::vector<Matrix> chol_path;    // spline-interpolated factor at every x_i
  std::vector<Matrix> sigma_hat;    // C C' at every x_i
};

namespace detail {

/// Pairwise-complete sample covariance of rows [lo, hi), eigenvalues floored
/// so the result factors.
inline Matrix bin_covariance(const Dataset& data, Index lo, Index hi) {
  const Index p = data.p();
  Vector mean = Vector::Zero(p);
  Vector count = Vector::Zero(p);
  for (Index i = lo; i < hi; ++i) {
    for (Index j = 0; j < p; ++j) {
      if (data.observed(i, j)) {
        mean(j) += data.y(i, j);
        count(j) += 1.0;
      }
    }
  }
  for (Index j = 0; j < p; ++j) {
    if (count(j) < 2.0) {
      throw DataError("local covariance bin has fewer than 2 observations in column " + std::to_string(j) +
                      "; use wider bins or fewer knots");
    }
    mean(j) /= count(j);
  }
  Matrix cov = Matrix::Zero(p, p);
  Matrix pairs = Matrix::Zero(p, p);
  for (Index i = lo; i < hi; ++i) {
    for (Index a = 0; a < p; ++a) {
      if (!data.observed(i, a)) continue;
      const double da = data.y(i, a) - mean(a);
      for (Index b = 0; b <= a; ++b) {
        if (!data.observed(i, b)) continue;
        cov(a, b) += da * (data.y(i, b) - mean(b));
        pairs(a, b) += 1.0;
      }
    }
  }
  for (Index a = 0; a < p; ++a) {
    for (Index b = 0; b <= a; ++b) {
      if (pairs(a, b) < 2.0) {
        cov(a, b) = 0.0;
      } else {
        cov(a, b) /= pairs(a, b) - 1.0;
      }
      cov(b, a) = cov(a, b);
    }
  }
  if (data.observed.block(lo, 0, hi - lo, p).all()) return cov;
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const double floor = 1e-8 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  const Vector ev = es.eigenvalues().cwiseMax(floor);
  Matrix fixed = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (fixed + fixed.transpose());
}

}  // namespace detail

/// Evenly spaced knot rows round(k (n-1) / (n_knots-1)), k = 0..n_knots-1.
inline std::vector<Index> even_knot_rows(Index n, Index n_knots) {
  std::vector<Index> rows;
  for (Index k = 0; k < n_knots; ++k) {
    rows.push_back(static_cast<Index>(std::llround(static_cast<double>(k) * static_cast<double>(n - 1) /
                                                   static_cast<double>(n_knots - 1))));
  }
  return rows;
}

/// Bins hold 2 * bin_halfwidth + 1 consecutive rows centred on the knot,
/// shifted inward at the ends of the grid. Requires a scalar predictor
/// with rows sorted by x.
inline LocalCovarianceEstimate local_covariance_estimate(const Dataset& data, Index n_knots,
                                                         Index bin_halfwidth) {
  const Index n = data.n(), p = data.p();
  if (data.q() != 1) throw std::invalid_argument("local covariance estimate needs a scalar predictor");
  if (n_knots < 2) throw std::invalid_argument("local covariance estimate needs at least 2 knots");
  if (2 * bin_halfwidth < p) {
    throw std::invalid_argument("bin half-width must exceed p/2 (got " + std::to_string(bin_halfwidth) +
                                " for p=" + std::to_string(p) + ")");
  }
  const Index width = 2 * bin_halfwidth + 1;
  if (width > n) throw DataError("bins of " + std::to_string(width) + " rows do not fit in " + std::to_string(n) + " rows");
  for (Index i = 1; i < n; ++i) {
    if (!(data.xs(i, 0) > data.xs(i - 1, 0))) {
      throw DataError("local covariance estimate needs strictly increasing predictors");
    }
  }
  LocalCovarianceEstimate est;
  est.knot_rows = even_knot_rows(n, n_knots);
  Vector knot_x(n_knots);
  Matrix knot_vals(n_knots, p * p);
  for (Index k = 0; k < n_knots; ++k) {
    const Index c = est.knot_rows[k];
    const Index lo = std::clamp<Index>(c - bin_halfwidth, 0, n - width);
    const Matrix cov = detail::bin_covariance(data, lo, lo + width);
    Matrix l = chol_psd(cov).lower;
    est.knot_chol.push_back(l);
    knot_x(k) = data.xs(c, 0);
    knot_vals.row(k) = Eigen::Map<const Eigen::RowVectorXd>(l.data(), p * p);
  }
  const NaturalCubicSpline spline(knot_x, knot_vals);
  est.chol_path.reserve(n);
  est.sigma_hat.reserve(n);
  for (Index i = 0; i < n; ++i) {
    const Eigen::RowVectorXd flat = spline(data.xs(i, 0));
    Matrix c = Eigen::Map<const Matrix>(flat.data(), p, p);
    c.triangularView<Eigen::StrictlyUpper>().setZero();
    est.sigma_hat.push_back(outer_gram(c));
    est.chol_path.push_back(std::move(c));
  }
  return est;
}

/// How the autocorrelation of an element series is estimated.
///  centered:   sample ACF around the series' own mean.
///  zero_mean:  ACF around 0, the prior mean of every off-diagonal element.
enum class AcfCentering { centered, zero_mean };

///  biased:  cross products divided by n (the usual estimator, |acf| <= 1).
///  overlap: each lag divided by its own overlap n - h, so a constant series
///           has ACF 1 at every lag under zero_mean centering.
enum class AcfNormalization { biased, overlap };


struct KappaHeuristicOptions {
  Index n_knots = 20;
  Index bin_halfwidth = -1;  // -1 selects floor(p/2) + 1
  AcfCentering centering = AcfCentering::centered;
  AcfNormalization normalization = AcfNormalization::biased;
  bool off_diagonal_only = false;
  KernelExponent exponent = KernelExponent::c_squared;
  double acf_low = 0.05;  // lags are used while the ACF stays inside (acf_low, 1)
  // Homoscedasticity screen on non-overlapping bins; elements whose variation
  // across bins is within sampling noise are not fitted.
  bool screen = true;
  double screen_level = 0.05;  // family-wise, Bonferroni over elements
  // Returned when no element varies detectably: the kappa whose model ACF
  // stays at flat_acf across the whole predictor range.
  double flat_acf = 0.95;
};

struct KappaHeuristicResult {
  double kappa = 0.0;
  bool homoscedastic = false;          // screen found no varying element
  Index element_i = 0, element_j = 0;  // element whose ACF decays slowest
  Vector lags;                         // distances used in the fit
  Vector acf;                          // ACF values at those distances
};

/// Sample autocorrelation at lags 0..max_lag.
inline Vector sample_acf(const Vector& series, Index max_lag, AcfCentering centering,
                         AcfNormalization norm = AcfNormalization::biased) {
  const Index n = series.size();
  const double mean = centering == AcfCentering::centered ? series.mean() : 0.0;
  const Vector z = series.array() - mean;
  const double denom = z.squaredNorm() / static_cast<double>(n);
  Vector acf = Vector::Zero(max_lag + 1);
  if (denom <= 0.0) {
    acf.setOnes();
    return acf;
  }
  for (Index h = 0; h <= max_lag && h < n; ++h) {
    const double count = norm == AcfNormalization::biased ? static_cast<double>(n)
                                                          : static_cast<double>(n - h);
    acf(h) = z.head(n - h).dot(z.tail(n - h)) / count / denom;
  }
  return acf;
}

/// Per-element homoscedasticity statistic on B non-overlapping bins of m rows:
/// T_ij = sum_b (S_b,ij - Sbar_ij)^2 / v_ij with v_ij = (Sbar_ii Sbar_jj + Sbar_ij^2) / (m - 1),
/// the Wishart sampling variance. Approximately chi^2 with B - 1 degrees under
/// a constant covariance. Returns a p x p mask of elements that reject at the
/// Bonferroni-corrected level.
inline Mask heteroscedastic_elements(const Dataset& data, Index bin_rows, double level) {
  const Index n = data.n(), p = data.p();
  const Index bins = n / bin_rows;
  if (bins < 2) throw DataError("homoscedasticity screen needs at least two bins");
  std::vector<Matrix> s;
  Matrix mean = Matrix::Zero(p, p);
  for (Index b = 0; b < bins; ++b) {
    s.push_back(detail::bin_covariance(data, b * bin_rows, (b + 1) * bin_rows));
    mean += s.back() / static_cast<double>(bins);
  }
  const double elements = static_cast<double>(p * (p + 1) / 2);
  const boost::math::chi_squared chi(static_cast<double>(bins - 1));
  const double threshold = boost::math::quantile(boost::math::complement(chi, level / elements));
  Mask out = Mask::Constant(p, p, false);
  for (Index i = 0; i < p; ++i) {
    for (Index j = 0; j <= i; ++j) {
      const double v = (mean(i, i) * mean(j, j) + mean(i, j) * mean(i, j)) / static_cast<double>(bin_rows - 1);
      double t = 0.0;
      for (const Matrix& sb : s) t += (sb(i, j) - mean(i, j)) * (sb(i, j) - mean(i, j));
      const bool reject = v > 0.0 && t / v > threshold;
      out(i, j) = reject;
      out(j, i) = reject;
    }
  }
  return out;
}

/// Fits kappa from the slowest-decaying element ACF of the smoothed local
/// covariance estimate. With exponent c^2 the model ACF is exp(-2 kappa d^2),
/// so the least-squares slope of -log ACF on d^2 is halved.
inline KappaHeuristicResult kappa_heuristic(const Dataset& data, const KappaHeuristicOptions& opts = {}) {
  const Index n = data.n(), p = data.p();
  const Index k0 = opts.bin_halfwidth < 0 ? p / 2 + 1 : opts.bin_halfwidth;
  const LocalCovarianceEstimate est = local_covariance_estimate(data, opts.n_knots, k0);

  // Evenly spaced grid assumed; lag h corresponds to distance h * dx.
  const double dx = (data.xs(n - 1, 0) - data.xs(0, 0)) / static_cast<double>(n - 1);
  const Index max_lag = n / 2;

  const double range = data.xs(n - 1, 0) - data.xs(0, 0);
  const double flat_kappa = -std::log(opts.flat_acf) / (range * range) *
                            (opts.exponent == KernelExponent::c_squared ? 0.5 : 1.0);
  Mask varying = Mask::Constant(p, p, true);
  if (opts.screen) varying = heteroscedastic_elements(data, 2 * k0 + 1, opts.screen_level);

  KappaHeuristicResult best;
  best.kappa = std::numeric_limits<double>::infinity();
  bool found = false;
  for (Index i = 0; i < p; ++i) {
    for (Index j = opts.off_diagonal_only ? i + 1 : i; j < p; ++j) {
      if (!varying(i, j)) continue;
      Vector series(n);
      for (Index t = 0; t < n; ++t) series(t) = est.sigma_hat[t](i, j);
      const Vector acf = sample_acf(series, max_lag, opts.centering, opts.normalization);
      std::vector<double> d2, nlog, dist, vals;
      for (Index h = 1; h <= max_lag; ++h) {
        if (!(acf(h) > opts.acf_low && acf(h) < 1.0)) break;
        const double d = static_cast<double>(h) * dx;
        d2.push_back(d * d);
        nlog.push_back(-std::log(acf(h)));
        dist.push_back(d);
        vals.push_back(acf(h));
      }
      double slope;
      if (d2.empty()) {
        // ACF left (acf_low, 1) at the first lag: either flat at 1 or immediately decorrelated.
        slope = acf(1) >= 1.0 ? 0.0 : std::numeric_limits<double>::infinity();
      } else {
        double num = 0.0, den = 0.0;
        for (std::size_t a = 0; a < d2.size(); ++a) {
          num += d2[a] * nlog[a];
          den += d2[a] * d2[a];
        }
        slope = num / den;
      }
      const double kappa = opts.exponent == KernelExponent::c_squared ? 0.5 * slope : slope;
      if (!found || kappa < best.kappa) {
        found = true;
        best.kappa = kappa;
        best.element_i = i;
        best.element_j = j;
        best.lags = Eigen::Map<const Vector>(dist.data(), static_cast<Index>(dist.size()));
        best.acf = Eigen::Map<const Vector>(vals.data(), static_cast<Index>(vals.size()));
      }
    }
  }
  if (!found) {
    if (opts.off_diagonal_only && p < 2) {
      throw std::invalid_argument("kappa heuristic needs p >= 2 for off-diagonal elements");
    }
    best = KappaHeuristicResult{};
    best.kappa = flat_kappa;
    best.homoscedastic = true;
    return best;
  }
  best.kappa = std::max(best.kappa, flat_kappa);
  return best;
}

}  // namespace covreg
