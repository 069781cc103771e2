#pragma once

#include <stdexcept>

#include "covreg/common.hpp"

namespace covreg {

/// Natural cubic interpolating spline fitted to several series at once.
///
/// Knots are strictly increasing; `values` holds one row per knot and one
/// column per series. Outside the knot range the spline continues linearly
/// with the end slope.
class NaturalCubicSpline {
 public:
  NaturalCubicSpline(const Vector& knots, const Matrix& values) : t_(knots), y_(values) {
    const Index n = knots.size();
    if (n < 2) throw std::invalid_argument("spline needs at least two knots");
    if (values.rows() != n) throw std::invalid_argument("spline: one value row per knot expected");
    for (Index i = 1; i < n; ++i) {
      if (!(knots(i) > knots(i - 1))) {
        throw std::invalid_argument("spline knots must be strictly increasing");
      }
    }
    // Second derivatives M with M_0 = M_{n-1} = 0; tridiagonal system for the interior.
    m_ = Matrix::Zero(n, values.cols());
    if (n == 2) return;
    const Index k = n - 2;
    Vector diag(k), lower(k), upper(k);
    Matrix rhs(k, values.cols());
    for (Index i = 1; i <= k; ++i) {
      const double h0 = knots(i) - knots(i - 1);
      const double h1 = knots(i + 1) - knots(i);
      lower(i - 1) = h0;
      diag(i - 1) = 2.0 * (h0 + h1);
      upper(i - 1) = h1;
      rhs.row(i - 1) = 6.0 * ((values.row(i + 1) - values.row(i)) / h1 -
                              (values.row(i) - values.row(i - 1)) / h0);
    }
    // Thomas algorithm; the system is strictly diagonally dominant.
    for (Index i = 1; i < k; ++i) {
      const double w = lower(i) / diag(i - 1);
      diag(i) -= w * upper(i - 1);
      rhs.row(i) -= w * rhs.row(i - 1);
    }
    m_.row(k) = rhs.row(k - 1) / diag(k - 1);
    for (Index i = k - 2; i >= 0; --i) {
      m_.row(i + 1) = (rhs.row(i) - upper(i) * m_.row(i + 2)) / diag(i);
    }
  }

  Index series() const { return y_.cols(); }

  /// Row vector of all series evaluated at x.
  Eigen::RowVectorXd operator()(double x) const {
    const Index n = t_.size();
    if (x <= t_(0)) {
      return y_.row(0) + (x - t_(0)) * slope(0, true);
    }
    if (x >= t_(n - 1)) {
      return y_.row(n - 1) + (x - t_(n - 1)) * slope(n - 2, false);
    }
    Index i = 0;
    {
      Index lo = 0, hi = n - 1;
      while (hi - lo > 1) {
        const Index mid = (lo + hi) / 2;
        if (t_(mid) <= x) lo = mid; else hi = mid;
      }
      i = lo;
    }
    const double h = t_(i + 1) - t_(i);
    const double a = (t_(i + 1) - x) / h;
    const double b = (x - t_(i)) / h;
    return a * y_.row(i) + b * y_.row(i + 1) +
           ((a * a * a - a) * m_.row(i) + (b * b * b - b) * m_.row(i + 1)) * (h * h / 6.0);
  }

  /// Evaluate at many points: one row per point.
  Matrix evaluate(const Vector& xs) const {
    Matrix out(xs.size(), y_.cols());
    for (Index i = 0; i < xs.size(); ++i) out.row(i) = (*this)(xs(i));
    return out;
  }

 private:
  // First derivative at the left (at_left) or right end of interval i.
  Eigen::RowVectorXd slope(Index i, bool at_left) const {
    const double h = t_(i + 1) - t_(i);
    const Eigen::RowVectorXd secant = (y_.row(i + 1) - y_.row(i)) / h;
    if (at_left) return secant - h / 6.0 * (2.0 * m_.row(i) + m_.row(i + 1));
    return secant + h / 6.0 * (m_.row(i) + 2.0 * m_.row(i + 1));
  }

  Vector t_;
  Matrix y_;
  Matrix m_;
};

}  // namespace covreg
