#pragma once

// Finite-alphabet probability primitives: total variation, maximal coupling,
// and the seeded random stream used by every Monte Carlo routine.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "catchain/error.hpp"

namespace catchain {

/// Category index in {0, ..., N-1}.
using Category = int;

inline constexpr double kProbTolerance = 1e-12;

/// Probability distribution on a finite alphabet of size >= 1.
///
/// Weights are validated on construction (nonnegative, sum within 1e-12 of
/// one) and then renormalized so that they sum to one up to rounding.
class ProbVector {
 public:
  ProbVector() = default;

  explicit ProbVector(std::vector<double> weights, double tolerance = kProbTolerance)
      : w_(std::move(weights)) {
    if (w_.empty()) throw DimensionError("ProbVector: empty weight vector");
    double total = 0.0;
    for (double& v : w_) {
      if (!std::isfinite(v)) throw DomainError("ProbVector: non-finite weight");
      if (v < 0.0) {
        if (v < -tolerance) throw DomainError("ProbVector: negative weight " + std::to_string(v));
        v = 0.0;
      }
      total += v;
    }
    if (std::abs(total - 1.0) > tolerance) {
      throw DomainError("ProbVector: weights sum to " + std::to_string(total));
    }
    for (double& v : w_) v /= total;
  }

  /// Normalizes arbitrary nonnegative weights with a positive total.
  static ProbVector normalized(std::vector<double> weights) {
    double total = 0.0;
    for (double v : weights) {
      if (!std::isfinite(v) || v < 0.0) throw DomainError("ProbVector::normalized: bad weight");
      total += v;
    }
    if (!(total > 0.0)) throw DomainError("ProbVector::normalized: zero total mass");
    for (double& v : weights) v /= total;
    return ProbVector(std::move(weights));
  }

  static ProbVector uniform(std::size_t n) { return ProbVector(std::vector<double>(n, 1.0 / static_cast<double>(n))); }

  static ProbVector point_mass(std::size_t n, Category at) {
    std::vector<double> w(n, 0.0);
    w.at(static_cast<std::size_t>(at)) = 1.0;
    return ProbVector(std::move(w));
  }

  std::size_t size() const { return w_.size(); }
  double operator[](std::size_t i) const { return w_[i]; }
  std::span<const double> weights() const { return w_; }
  const std::vector<double>& vec() const { return w_; }

 private:
  std::vector<double> w_;
};

/// (1/2) * sum |p_i - q_i| over raw spans.
inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("tv_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

inline double tv_distance(const ProbVector& p, const ProbVector& q) { return tv_distance(p.weights(), q.weights()); }

/// Joint law on E x E realizing the maximal coupling of two marginals.
class CouplingTable {
 public:
  CouplingTable(std::size_t n, std::vector<double> joint, double offdiag_mass)
      : n_(n), joint_(std::move(joint)), offdiag_(offdiag_mass) {
    if (joint_.size() != n_ * n_) throw DimensionError("CouplingTable: joint must be N x N");
  }

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return joint_[i * n_ + j]; }
  double offdiag_mass() const { return offdiag_; }
  std::span<const double> joint() const { return joint_; }

  std::vector<double> first_marginal() const {
    std::vector<double> m(n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) m[i] += (*this)(i, j);
    return m;
  }

  std::vector<double> second_marginal() const {
    std::vector<double> m(n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) m[j] += (*this)(i, j);
    return m;
  }

 private:
  std::size_t n_;
  std::vector<double> joint_;
  double offdiag_;
};

/// Maximal coupling: min(p_i, q_i) on the diagonal, the product of the
/// normalized residuals off the diagonal.
inline CouplingTable maximal_coupling(const ProbVector& p, const ProbVector& q) {
  const std::size_t n = p.size();
  if (q.size() != n) throw DimensionError("maximal_coupling: length mismatch");
  std::vector<double> joint(n * n, 0.0);
  std::vector<double> rp(n), rq(n);
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double m = std::min(p[i], q[i]);
    joint[i * n + i] = m;
    trace += m;
    rp[i] = p[i] - m;
    rq[i] = q[i] - m;
  }
  const double d = tv_distance(p, q);
  if (d > 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      if (rp[i] == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) joint[i * n + j] += rp[i] * rq[j] / d;
      }
    }
  }
  return CouplingTable(n, std::move(joint), d);
}

/// Reproducible random stream indexed by (seed, stream_id).
///
/// Distinct stream ids give statistically independent streams; the state is
/// derived by splitmix64 mixing so nearby ids do not produce correlated
/// Mersenne Twister states.
class SeededRng {
 public:
  SeededRng(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_(stream_id), engine_(mix(seed, stream_id)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }

  /// Child stream for replica `index`; independent of this stream's position.
  SeededRng split(std::uint64_t index) const { return SeededRng(mix(seed_, stream_) ^ 0x5bd1e995ULL, index); }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1), for inverse-CDF sampling.
  double uniform_open() {
    double u;
    do { u = uniform(); } while (u == 0.0);
    return u;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
  }

  double logistic() {
    const double u = uniform_open();
    return std::log(u) - std::log1p(-u);
  }

  Category categorical(std::span<const double> w) {
    const double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
      acc += w[i];
      if (u < acc) return static_cast<Category>(i);
    }
    // Skip trailing zero-mass cells left by rounding.
    for (std::size_t i = w.size(); i-- > 0;) {
      if (w[i] > 0.0) return static_cast<Category>(i);
    }
    return static_cast<Category>(w.size() - 1);
  }

  Category categorical(const ProbVector& p) { return categorical(p.weights()); }

 private:
  static std::uint64_t splitmix(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed;
    const std::uint64_t a = splitmix(s);
    std::uint64_t t = stream ^ 0xd1b54a32d192ed03ULL;
    const std::uint64_t b = splitmix(t);
    std::uint64_t c = a ^ (b * 0x2545f4914f6cdd1dULL);
    return splitmix(c);
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Draws (U, V) from a coupling table.
inline std::pair<Category, Category> sample_coupled(const CouplingTable& table, SeededRng& rng) {
  const std::size_t n = table.size();
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t k = 0; k < n * n; ++k) {
    const double w = table.joint()[k];
    if (w <= 0.0) continue;
    last = k;
    acc += w;
    if (u < acc) return {static_cast<Category>(k / n), static_cast<Category>(k % n)};
  }
  return {static_cast<Category>(last / n), static_cast<Category>(last % n)};
}

/// Given U = u drawn from p, draws V from the conditional law of the maximal
/// coupling of (p, q). Equivalent to sampling the table row of u without
/// materializing the N x N table.
inline Category sample_coupled_second(std::span<const double> p, std::span<const double> q, Category u,
                                      SeededRng& rng) {
  const auto ui = static_cast<std::size_t>(u);
  const double pu = p[ui];
  const double stay = std::min(pu, q[ui]);
  if (pu <= 0.0 || rng.uniform() * pu < stay) return u;
  double d = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) d += std::max(q[j] - p[j], 0.0);
  double target = rng.uniform() * d;
  std::size_t last = ui;
  for (std::size_t j = 0; j < q.size(); ++j) {
    const double r = std::max(q[j] - p[j], 0.0);
    if (r <= 0.0) continue;
    last = j;
    if (target < r) return static_cast<Category>(j);
    target -= r;
  }
  return static_cast<Category>(last);
}

}  // namespace catchain
