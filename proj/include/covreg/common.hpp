#pragma once

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace covreg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Factorization or sampling failure that survived the jitter policy.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A request that exceeds a configured computational cap.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unsupported input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LogLevel { debug, info, warn };

namespace detail {
inline std::function<void(LogLevel, std::string_view)>& log_sink() {
  static std::function<void(LogLevel, std::string_view)> sink;
  return sink;
}
}  // namespace detail

// The library is silent unless a sink is installed (the CLI installs one).
inline void set_log_sink(std::function<void(LogLevel, std::string_view)> sink) {
  detail::log_sink() = std::move(sink);
}

inline void log(LogLevel level, std::string_view message) {
  if (auto& sink = detail::log_sink()) sink(level, message);
}

inline bool is_symmetric(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

/// G G' with the upper triangle copied from the lower, so the result is exactly symmetric.
inline Matrix outer_gram(const Matrix& g) {
  Matrix s = Matrix::Zero(g.rows(), g.rows());
  s.selfadjointView<Eigen::Lower>().rankUpdate(g);
  s.triangularView<Eigen::StrictlyUpper>() = s.transpose();
  return s;
}

}  // namespace covreg
