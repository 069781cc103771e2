#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

#include "covreg/common.hpp"
#include "covreg/random.hpp"

namespace covreg {

/// Squared-exponential correlation c(x, x') = exp(-kappa |x - x'|^2) plus a
/// diagonal nugget for Gram matrices.
struct KernelParams {
  double kappa = 10.0;   // inverse squared length-scale
  double nugget = 1e-5;  // jitter added to Gram diagonals

  void validate() const {
    if (!(kappa > 0.0) || !std::isfinite(kappa)) {
      throw std::invalid_argument("kernel kappa must be positive and finite");
    }
    if (!(nugget >= 0.0) || !std::isfinite(nugget)) {
      throw std::invalid_argument("kernel nugget must be nonnegative and finite");
    }
  }
};

/// Predictor points are the rows of a matrix (n x q).
using PredictorGrid = Matrix;

inline double se_kernel(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& x2,
                        const KernelParams& params) {
  if (x.size() != x2.size()) {
    throw std::invalid_argument("se_kernel: predictor dimension mismatch");
  }
  return std::exp(-params.kappa * (x - x2).squaredNorm());
}

struct GramMatrix {
  Matrix values;
  PredictorGrid source_points;
  KernelParams params;

  Index size() const { return values.rows(); }
};

inline GramMatrix gram_matrix(const PredictorGrid& xs, const KernelParams& params) {
  params.validate();
  const Index n = xs.rows();
  if (n < 1) throw std::invalid_argument("gram_matrix needs at least one point");
  if (!xs.allFinite()) throw std::invalid_argument("gram_matrix: non-finite predictor");
  Matrix k(n, n);
  for (Index i = 0; i < n; ++i) {
    k(i, i) = 1.0 + params.nugget;
    for (Index j = 0; j < i; ++j) {
      const double v = std::exp(-params.kappa * (xs.row(i) - xs.row(j)).squaredNorm());
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return GramMatrix{std::move(k), xs, params};
}

/// Lower Cholesky factor plus the diagonal jitter that made it succeed.
struct CholeskyFactor {
  Matrix lower;
  double jitter = 0.0;
  int attempts = 1;
};

namespace detail {
// Plain column Cholesky that reports the first non-positive pivot.
inline std::pair<Index, double> first_failing_pivot(const Matrix& m) {
  const Index n = m.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    double d = m(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > 0.0)) return {j, d};
    l(j, j) = std::sqrt(d);
    for (Index i = j + 1; i < n; ++i) {
      l(i, j) = (m(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  return {-1, 0.0};
}
}  // namespace detail

inline constexpr double kJitterBase = 1e-10;
inline constexpr int kJitterSteps = 7;  // 1e-10 ... 1e-4

/// Cholesky with jitter escalation 1e-10 * 10^j, j = 0..6, after a plain attempt.
inline CholeskyFactor chol_psd(const Matrix& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("chol_psd: matrix is not square");
  if (!m.allFinite()) throw NumericalError("chol_psd: matrix has non-finite entries");
  if (!is_symmetric(m, 1e-8)) throw std::invalid_argument("chol_psd: matrix is not symmetric");

  Eigen::LLT<Matrix> llt(m);
  if (llt.info() == Eigen::Success) return {llt.matrixL(), 0.0, 1};

  const Index n = m.rows();
  double jitter = kJitterBase;
  for (int j = 0; j < kJitterSteps; ++j, jitter *= 10.0) {
    llt.compute(m + jitter * Matrix::Identity(n, n));
    if (llt.info() == Eigen::Success) {
      std::ostringstream msg;
      msg << "chol_psd: factorization needed diagonal jitter " << jitter << " (n=" << n << ")";
      log(LogLevel::debug, msg.str());
      return {llt.matrixL(), jitter, j + 2};
    }
  }
  const auto [pivot, value] =
      detail::first_failing_pivot(m + (jitter / 10.0) * Matrix::Identity(n, n));
  std::ostringstream msg;
  msg << "chol_psd: not factorizable after jitter " << jitter / 10.0 << "; pivot " << pivot
      << " has value " << value;
  throw NumericalError(msg.str());
}

/// Draw of a zero-mean GP at the Gram matrix's points.
inline Vector gp_draw(const GramMatrix& gram, RandomStream& rng) {
  const CholeskyFactor f = chol_psd(gram.values);
  return f.lower * rng.normal_vector(gram.size());
}

/// Gram matrix together with its factor; reused across many conditional draws.
struct GpPrior {
  GramMatrix gram;
  CholeskyFactor factor;

  static GpPrior build(const PredictorGrid& xs, const KernelParams& params) {
    GramMatrix g = gram_matrix(xs, params);
    CholeskyFactor f = chol_psd(g.values);
    return GpPrior{std::move(g), std::move(f)};
  }

  Index size() const { return gram.size(); }

  Vector draw(RandomStream& rng) const { return factor.lower * rng.normal_vector(size()); }
};

/// Draw f ~ N(S b, S) with S^-1 = K^-1 + diag(d), d >= 0.
///
/// Uses the exact perturbation form f = f0 + K A (I + A K A)^-1 (w - A f0 - e)
/// with A = diag(sqrt(d)), w = b / sqrt(d), f0 ~ N(0, K), e ~ N(0, I). Entries
/// with d_i = 0 carry no information (their b_i must be 0 as well).
inline Vector sample_gp_conditional(const GpPrior& prior, const Vector& d, const Vector& b,
                                    RandomStream& rng) {
  const Index n = prior.size();
  if (d.size() != n || b.size() != n) {
    throw std::invalid_argument("sample_gp_conditional: size mismatch");
  }
  const Matrix& k = prior.gram.values;
  Vector a(n), w(n);
  for (Index i = 0; i < n; ++i) {
    if (d(i) < 0.0) throw std::invalid_argument("sample_gp_conditional: negative precision");
    a(i) = std::sqrt(d(i));
    w(i) = a(i) > 0.0 ? b(i) / a(i) : 0.0;
  }
  const Vector f0 = prior.factor.lower * rng.normal_vector(n);
  const Vector e = rng.normal_vector(n);

  Matrix bmat = a.asDiagonal() * k * a.asDiagonal();
  bmat.diagonal().array() += 1.0;
  Eigen::LLT<Matrix> llt(bmat);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("sample_gp_conditional: I + A K A not positive definite");
  }
  const Vector r = w - a.cwiseProduct(f0) - e;
  const Vector s = llt.solve(r);
  return f0 + k * a.cwiseProduct(s);
}

/// Mean and covariance of the same conditional, for oracles and diagnostics.
inline std::pair<Vector, Matrix> gp_conditional_moments(const GpPrior& prior, const Vector& d,
                                                        const Vector& b) {
  const Matrix& k = prior.gram.values;
  const Index n = prior.size();
  const Vector a = d.cwiseSqrt();
  Vector w(n);
  for (Index i = 0; i < n; ++i) w(i) = a(i) > 0.0 ? b(i) / a(i) : 0.0;
  Matrix bmat = a.asDiagonal() * k * a.asDiagonal();
  bmat.diagonal().array() += 1.0;
  Eigen::LLT<Matrix> llt(bmat);
  const Matrix ka = k * a.asDiagonal();
  const Vector mean = ka * llt.solve(w);
  const Matrix cov = k - ka * llt.solve(ka.transpose());
  return {mean, cov};
}

}  // namespace covreg
