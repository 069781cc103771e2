#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

#include "covreg/common.hpp"

namespace covreg {

/// Seeded pseudo-random stream. Every stochastic operation in the library
/// takes one of these explicitly; equal seeds give bit-identical results.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  /// Independent stream for parallel work (chain `id` of a run, replicate, ...).
  [[nodiscard]] RandomStream spawn(std::uint64_t id) const {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(id >> 32),
                      0x9e3779b9u};
    std::uint64_t s = 0;
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    s = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    return RandomStream(s);
  }

  std::uint64_t seed() const { return seed_; }

  double normal() { return normal_(engine_); }

  Vector normal_vector(Index n) {
    Vector z(n);
    for (Index i = 0; i < n; ++i) z(i) = normal_(engine_);
    return z;
  }

  double uniform() { return uniform_(engine_); }

  /// Ga(shape, rate): mean shape / rate.
  double gamma(double shape, double rate) {
    if (!(shape > 0.0) || !(rate > 0.0)) {
      throw std::invalid_argument("gamma draw needs positive shape and rate");
    }
    std::gamma_distribution<double> g(shape, 1.0 / rate);
    return g(engine_);
  }

  double chi_squared(double dof) { return gamma(0.5 * dof, 0.5); }

  /// Standard normal restricted to (0, inf), by rejection.
  double positive_normal() {
    for (;;) {
      const double z = normal();
      if (z > 0.0) return z;
    }
  }

  /// Index drawn with probability proportional to exp(log_weights).
  Index categorical_log(const Vector& log_weights) {
    const double top = log_weights.maxCoeff();
    const Vector w = (log_weights.array() - top).exp().matrix();
    double u = uniform() * w.sum();
    for (Index i = 0; i < w.size(); ++i) {
      u -= w(i);
      if (u <= 0.0) return i;
    }
    return w.size() - 1;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Draw from W(dof, scale) where scale = lower * lower'. Mean is dof * scale.
///
/// dof > p - 1 uses the Bartlett decomposition. Integer dof <= p - 1 gives the
/// singular Wishart as a sum of outer products. Non-integer dof <= p - 1 has no
/// Wishart law; it is drawn as (dof / ceil(dof)) times a singular Wishart with
/// ceil(dof) degrees, which keeps the mean dof * scale.
inline Matrix wishart_draw(double dof, const Matrix& scale_lower, RandomStream& rng) {
  const Index p = scale_lower.rows();
  if (!(dof > 0.0)) throw std::invalid_argument("Wishart degrees of freedom must be positive");
  if (dof > static_cast<double>(p - 1)) {
    Matrix a = Matrix::Zero(p, p);
    for (Index i = 0; i < p; ++i) {
      a(i, i) = std::sqrt(rng.chi_squared(dof - static_cast<double>(i)));
      for (Index j = 0; j < i; ++j) a(i, j) = rng.normal();
    }
    const Matrix la = scale_lower * a;
    return la * la.transpose();
  }
  const double rank = std::ceil(dof);
  const double factor = dof / rank;
  Matrix w = Matrix::Zero(p, p);
  for (int r = 0; r < static_cast<int>(rank); ++r) {
    const Vector z = scale_lower * rng.normal_vector(p);
    w.noalias() += z * z.transpose();
  }
  return factor * w;
}

}  // namespace covreg
