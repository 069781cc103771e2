#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "covreg/archive.hpp"
#include "covreg/common.hpp"
#include "covreg/gp_kernel.hpp"
#include "covreg/model.hpp"
#include "covreg/random.hpp"

namespace covreg {

struct GaussianPredictive {
  Vector mean;
  Matrix covariance;
  std::vector<Index> index_map;  // response components covered, ascending

  Index dim() const { return mean.size(); }
};

struct IntervalSummary {
  double lower = 0.0;
  double upper = 0.0;
  double mass = 0.0;

  double width() const { return upper - lower; }
  bool contains(double v) const { return lower <= v && v <= upper; }
};

// ---------------------------------------------------------------------------
// Gaussian conditioning and divergence

/// Law of the components not in observed_idx given y_o = observed_vals.
inline GaussianPredictive conditional_predictive(const Vector& mu, const Matrix& sigma,
                                                 const std::vector<Index>& observed_idx,
                                                 const Vector& observed_vals) {
  const Index p = mu.size();
  if (sigma.rows() != p || sigma.cols() != p) throw std::invalid_argument("conditional_predictive: shape mismatch");
  if (static_cast<Index>(observed_idx.size()) != observed_vals.size()) {
    throw std::invalid_argument("conditional_predictive: observed index/value count mismatch");
  }
  std::vector<bool> is_obs(static_cast<std::size_t>(p), false);
  for (Index j : observed_idx) {
    if (j < 0 || j >= p) throw std::invalid_argument("conditional_predictive: index out of range");
    if (is_obs[static_cast<std::size_t>(j)]) throw std::invalid_argument("conditional_predictive: duplicate index");
    is_obs[static_cast<std::size_t>(j)] = true;
  }
  GaussianPredictive out;
  for (Index j = 0; j < p; ++j) {
    if (!is_obs[static_cast<std::size_t>(j)]) out.index_map.push_back(j);
  }
  const Index m = static_cast<Index>(out.index_map.size());
  const Index o = static_cast<Index>(observed_idx.size());
  Vector mu_m(m), mu_o(o);
  Matrix s_mm(m, m), s_mo(m, o), s_oo(o, o);
  for (Index a = 0; a < m; ++a) {
    mu_m(a) = mu(out.index_map[a]);
    for (Index b = 0; b < m; ++b) s_mm(a, b) = sigma(out.index_map[a], out.index_map[b]);
    for (Index b = 0; b < o; ++b) s_mo(a, b) = sigma(out.index_map[a], observed_idx[b]);
  }
  for (Index a = 0; a < o; ++a) {
    mu_o(a) = mu(observed_idx[a]);
    for (Index b = 0; b < o; ++b) s_oo(a, b) = sigma(observed_idx[a], observed_idx[b]);
  }
  if (o == 0) {
    out.mean = mu_m;
    out.covariance = s_mm;
    return out;
  }
  Eigen::LLT<Matrix> llt(s_oo);
  if (llt.info() != Eigen::Success) throw NumericalError("conditional_predictive: observed block is not positive definite");
  out.mean = mu_m + s_mo * llt.solve(observed_vals - mu_o);
  out.covariance = s_mm - s_mo * llt.solve(s_mo.transpose());
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

/// KL(p || q) between two Gaussians over the same components.
inline double gaussian_kl(const GaussianPredictive& p, const GaussianPredictive& q) {
  if (p.dim() != q.dim() || p.covariance.rows() != p.dim() || q.covariance.rows() != q.dim() ||
      p.index_map != q.index_map) {
    throw std::invalid_argument("gaussian_kl: dimension or index mismatch");
  }
  const Index d = p.dim();
  if (d == 0) return 0.0;
  Eigen::LLT<Matrix> lq(q.covariance), lp(p.covariance);
  if (lq.info() != Eigen::Success || lp.info() != Eigen::Success) {
    throw NumericalError("gaussian_kl: covariance not positive definite");
  }
  const Vector dm = q.mean - p.mean;
  const double tr = lq.solve(p.covariance).trace();
  const double quad = dm.dot(lq.solve(dm));
  const Matrix lqm = lq.matrixL();
  const Matrix lpm = lp.matrixL();
  const double logdet_q = 2.0 * lqm.diagonal().array().log().sum();
  const double logdet_p = 2.0 * lpm.diagonal().array().log().sum();
  return std::max(0.0, 0.5 * (tr + quad - static_cast<double>(d) + logdet_q - logdet_p));
}

/// Draw from a GaussianPredictive.
inline Vector sample_predictive(const GaussianPredictive& g, RandomStream& rng) {
  if (g.dim() == 0) return Vector();
  const CholeskyFactor f = chol_psd(g.covariance);
  return g.mean + f.lower * rng.normal_vector(g.dim());
}

// ---------------------------------------------------------------------------
// Error curves and intervals

/// ||estimate(x_i) - truth(x_i)||_F at every grid point.
inline std::vector<double> frobenius_error(const CovarianceTrajectory& estimate, const CovarianceTrajectory& truth) {
  if (estimate.size() != truth.size()) throw std::invalid_argument("frobenius_error: grid mismatch");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(truth.size()));
  for (Index i = 0; i < truth.size(); ++i) {
    if (estimate.sigmas[i].rows() != truth.sigmas[i].rows() || estimate.sigmas[i].cols() != truth.sigmas[i].cols()) {
      throw std::invalid_argument("frobenius_error: matrix shape mismatch");
    }
    out.push_back((estimate.sigmas[i] - truth.sigmas[i]).norm());
  }
  return out;
}

/// Shortest window of ceil(mass * M) consecutive order statistics. Among
/// equally short windows the central one is returned.
inline IntervalSummary hpd_interval(std::vector<double> samples, double mass, std::size_t min_samples = 20) {
  if (!(mass > 0.0 && mass < 1.0)) throw std::invalid_argument("hpd_interval: mass must lie in (0, 1)");
  if (samples.size() < std::max<std::size_t>(min_samples, 1)) {
    throw std::invalid_argument("hpd_interval: need at least " + std::to_string(min_samples) + " samples");
  }
  std::sort(samples.begin(), samples.end());
  const std::size_t m = samples.size();
  const auto cover = static_cast<std::size_t>(std::ceil(mass * static_cast<double>(m) - 1e-9));
  const std::size_t span = std::max<std::size_t>(cover, 1) - 1;
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> ties;
  for (std::size_t lo = 0; lo + span < m; ++lo) {
    const double w = samples[lo + span] - samples[lo];
    if (w < best) {
      best = w;
      ties.assign(1, lo);
    } else if (w == best) {
      ties.push_back(lo);
    }
  }
  const std::size_t lo = ties[ties.size() / 2];
  return {samples[lo], samples[lo + span], mass};
}

/// Equal-tailed interval from the empirical (mass/2, 1 - mass/2) order statistics.
inline IntervalSummary equal_tail_interval(std::vector<double> samples, double mass) {
  if (samples.empty()) throw std::invalid_argument("equal_tail_interval: no samples");
  std::sort(samples.begin(), samples.end());
  const double m = static_cast<double>(samples.size());
  const double tail = 0.5 * (1.0 - mass);
  const auto lo = static_cast<std::size_t>(std::floor(tail * m));
  const auto hi = std::min(samples.size() - 1, static_cast<std::size_t>(std::ceil((1.0 - tail) * m)) - 1);
  return {samples[lo], samples[hi], mass};
}

// ---------------------------------------------------------------------------
// Convergence

/// Potential scale reduction R^{1/2} = sqrt((W + (m + 1) / m * B / n) / W), with
/// W the mean within-chain variance and B / n the variance of the chain means.
/// W = 0 gives 1 when all chain means agree and +inf otherwise.
inline double psrf(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size();
  if (m < 2) throw std::invalid_argument("psrf: need at least two chains");
  const std::size_t n = chains.front().size();
  if (n < 10) throw std::invalid_argument("psrf: chains need at least 10 draws");
  for (const auto& c : chains) {
    if (c.size() != n) throw std::invalid_argument("psrf: chains must have equal length");
  }
  std::vector<double> means(m);
  double w = 0.0;
  for (std::size_t c = 0; c < m; ++c) {
    double s = 0.0;
    for (double v : chains[c]) s += v;
    means[c] = s / static_cast<double>(n);
    double ss = 0.0;
    for (double v : chains[c]) ss += (v - means[c]) * (v - means[c]);
    w += ss / static_cast<double>(n - 1);
  }
  w /= static_cast<double>(m);
  double grand = 0.0;
  for (double v : means) grand += v;
  grand /= static_cast<double>(m);
  double b_over_n = 0.0;
  for (double v : means) b_over_n += (v - grand) * (v - grand);
  b_over_n /= static_cast<double>(m - 1);
  const double scale = std::max(1.0, std::abs(grand));
  if (w <= 1e-300 * scale * scale) {
    return b_over_n <= 1e-24 * scale * scale ? 1.0 : std::numeric_limits<double>::infinity();
  }
  const double md = static_cast<double>(m);
  return std::sqrt((w + (md + 1.0) / md * b_over_n) / w);
}

// ---------------------------------------------------------------------------
// Held-out mask and predictive study

/// Biased removal: entry (i, j) is dropped with probability
/// 0.03 + 0.04 (1 - ||Sigma(x_i)||_F / max_i ||Sigma(x_i)||_F). Returns the
/// observed mask (true = kept).
inline Mask held_out_mask(const CovarianceTrajectory& truth, Index p, RandomStream& rng) {
  const Index n = truth.size();
  if (n == 0) throw std::invalid_argument("held_out_mask: empty truth");
  Vector norms(n);
  for (Index i = 0; i < n; ++i) norms(i) = truth.sigmas[i].norm();
  const double top = norms.maxCoeff();
  Mask keep(n, p);
  for (Index i = 0; i < n; ++i) {
    const double prob = 0.03 + 0.04 * (1.0 - norms(i) / top);
    for (Index j = 0; j < p; ++j) keep(i, j) = !(rng.uniform() < prob);
  }
  return keep;
}

/// Average of KL(P_{i,m} || Q_i) over rows with held-out entries and over
/// archive draws, where both laws condition on the observed part of row i.
inline double predictive_kl_study(const PosteriorArchive& archive, const Dataset& data,
                                  const CovarianceTrajectory& truth) {
  if (archive.n != data.n() || archive.p != data.p() || truth.size() != data.n()) {
    throw std::invalid_argument("predictive_kl_study: size mismatch");
  }
  if (archive.draws() == 0) throw std::invalid_argument("predictive_kl_study: archive has no draws");
  double total = 0.0;
  Index count = 0;
  for (Index i = 0; i < data.n(); ++i) {
    std::vector<Index> obs;
    for (Index j = 0; j < data.p(); ++j) {
      if (data.observed(i, j)) obs.push_back(j);
    }
    if (static_cast<Index>(obs.size()) == data.p()) continue;
    Vector vals(static_cast<Index>(obs.size()));
    for (std::size_t a = 0; a < obs.size(); ++a) vals(static_cast<Index>(a)) = data.y(i, obs[a]);
    const Vector true_mu = truth.has_mean() ? truth.mus[i] : Vector::Zero(data.p());
    const GaussianPredictive q = conditional_predictive(true_mu, truth.sigmas[i], obs, vals);
    for (Index m = 0; m < archive.draws(); ++m) {
      const GaussianPredictive pm = conditional_predictive(archive.mu_at(m, i), archive.sigma_at(m, i), obs, vals);
      total += gaussian_kl(pm, q);
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("predictive_kl_study: no held-out entries");
  return total / static_cast<double>(count);
}

/// Posterior mean and HPD band of entry (r, c) of Sigma(x_i) at every i.
struct ElementSeries {
  Index r = 0, c = 0;
  std::vector<double> mean, lower, upper;
};

inline ElementSeries element_series(const PosteriorArchive& a, Index r, Index c, double mass = 0.95,
                                    std::size_t min_samples = 20) {
  ElementSeries s{r, c, {}, {}, {}};
  for (Index i = 0; i < a.n; ++i) {
    const std::vector<double> d = a.element_draws(i, r, c);
    double mean = 0.0;
    for (double v : d) mean += v;
    s.mean.push_back(mean / static_cast<double>(d.size()));
    const IntervalSummary iv = hpd_interval(d, mass, min_samples);
    s.lower.push_back(iv.lower);
    s.upper.push_back(iv.upper);
  }
  return s;
}

/// Fraction of (i, r <= c) pairs whose true Sigma entry lies inside the HPD band.
inline double hpd_coverage(const PosteriorArchive& a, const CovarianceTrajectory& truth, double mass = 0.95) {
  if (truth.size() != a.n) throw std::invalid_argument("hpd_coverage: grid mismatch");
  Index hit = 0, total = 0;
  for (Index c = 0; c < a.p; ++c) {
    for (Index r = c; r < a.p; ++r) {
      const ElementSeries s = element_series(a, r, c, mass);
      for (Index i = 0; i < a.n; ++i) {
        const double v = truth.sigmas[i](r, c);
        hit += (s.lower[i] <= v && v <= s.upper[i]) ? 1 : 0;
        ++total;
      }
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace covreg
