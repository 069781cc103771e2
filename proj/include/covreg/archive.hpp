#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "covreg/common.hpp"
#include "covreg/model.hpp"

namespace covreg {

/// Retained posterior draws of Sigma(x_i) (and mu(x_i) when the mean is
/// modelled) at every observed predictor, plus scalar traces and the manifest
/// of the run that produced them.
///
/// Each Sigma draw is packed as n consecutive lower triangles (column-major
/// within a triangle), so draw m, point i, entry (r, c) with r >= c lives at
/// i * P + packed_index(r, c) where P = p (p + 1) / 2.
struct PosteriorArchive {
  std::string model = "covreg";
  Index n = 0;
  Index p = 0;
  std::vector<Index> sweeps;  // sweep number of each retained draw
  std::vector<Vector> sigma;
  std::vector<Vector> mu;     // empty, or one n*p vector per draw
  std::map<std::string, std::vector<double>> traces;
  nlohmann::json manifest = nlohmann::json::object();

  Index draws() const { return static_cast<Index>(sigma.size()); }
  bool has_mean() const { return !mu.empty(); }
  Index packed_size() const { return p * (p + 1) / 2; }

  Index packed_index(Index r, Index c) const {
    if (r < c) std::swap(r, c);
    // column c starts after columns 0..c-1, which hold p, p-1, ..., p-c+1 entries
    return c * p - c * (c - 1) / 2 + (r - c);
  }

  void append(const CovarianceTrajectory& t, Index sweep) {
    if (draws() == 0 && n == 0) {
      n = t.size();
      p = t.sigmas.empty() ? 0 : t.sigmas.front().rows();
    }
    if (t.size() != n) throw std::invalid_argument("archive: trajectory length differs from archive");
    if (draws() > 0 && t.has_mean() != has_mean()) {
      throw std::invalid_argument("archive: mean presence differs between draws");
    }
    const Index ps = packed_size();
    Vector packed(n * ps);
    for (Index i = 0; i < n; ++i) {
      const Matrix& s = t.sigmas[i];
      for (Index c = 0; c < p; ++c) {
        for (Index r = c; r < p; ++r) packed(i * ps + packed_index(r, c)) = s(r, c);
      }
    }
    sigma.push_back(std::move(packed));
    if (t.has_mean()) {
      Vector m(n * p);
      for (Index i = 0; i < n; ++i) m.segment(i * p, p) = t.mus[i];
      mu.push_back(std::move(m));
    }
    sweeps.push_back(sweep);
  }

  double sigma_entry(Index draw, Index i, Index r, Index c) const {
    return sigma[draw](i * packed_size() + packed_index(r, c));
  }

  Matrix sigma_at(Index draw, Index i) const {
    Matrix s(p, p);
    for (Index c = 0; c < p; ++c) {
      for (Index r = c; r < p; ++r) {
        s(r, c) = sigma_entry(draw, i, r, c);
        s(c, r) = s(r, c);
      }
    }
    return s;
  }

  Vector mu_at(Index draw, Index i) const {
    if (!has_mean()) return Vector::Zero(p);
    return mu[draw].segment(i * p, p);
  }

  CovarianceTrajectory trajectory(Index draw) const {
    CovarianceTrajectory t;
    for (Index i = 0; i < n; ++i) {
      t.sigmas.push_back(sigma_at(draw, i));
      if (has_mean()) t.mus.push_back(mu_at(draw, i));
    }
    return t;
  }

  /// Draws of entry (r, c) of Sigma(x_i), in retention order.
  std::vector<double> element_draws(Index i, Index r, Index c) const {
    std::vector<double> out;
    out.reserve(sigma.size());
    const Index off = i * packed_size() + packed_index(r, c);
    for (const Vector& d : sigma) out.push_back(d(off));
    return out;
  }

  CovarianceTrajectory posterior_mean() const {
    if (draws() == 0) throw std::logic_error("archive: no draws");
    Vector acc = Vector::Zero(n * packed_size());
    for (const Vector& d : sigma) acc += d;
    acc /= static_cast<double>(draws());
    Vector macc = Vector::Zero(n * p);
    for (const Vector& m : mu) macc += m;
    if (has_mean()) macc /= static_cast<double>(draws());
    CovarianceTrajectory t;
    for (Index i = 0; i < n; ++i) {
      Matrix s(p, p);
      for (Index c = 0; c < p; ++c) {
        for (Index r = c; r < p; ++r) {
          s(r, c) = acc(i * packed_size() + packed_index(r, c));
          s(c, r) = s(r, c);
        }
      }
      t.sigmas.push_back(s);
      if (has_mean()) t.mus.push_back(macc.segment(i * p, p));
    }
    return t;
  }

  /// Equality of everything except the manifest, whose timings vary run to run.
  bool same_draws(const PosteriorArchive& o) const {
    auto same = [](const std::vector<Vector>& a, const std::vector<Vector>& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].size() != b[i].size() || a[i] != b[i]) return false;
      }
      return true;
    };
    return model == o.model && n == o.n && p == o.p && sweeps == o.sweeps && same(sigma, o.sigma) &&
           same(mu, o.mu) && traces == o.traces;
  }
};

}  // namespace covreg
