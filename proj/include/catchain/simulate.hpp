#pragma once

// Covariate generation, forward sampling with a certified burn-in, the glued
// ladder of coupled paths, exact small-instance laws and the covariate
// coupling coefficients a_t.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <numbers>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <gsl/gsl_sf_gamma.h>

#include "catchain/core_prob.hpp"
#include "catchain/coupling_bounds.hpp"
#include "catchain/csv.hpp"
#include "catchain/decay_seq.hpp"
#include "catchain/error.hpp"
#include "catchain/kernels.hpp"

namespace catchain {

// ---------------------------------------------------------------------------
// Parallel replicas.

/// Worker count: CATCHAIN_THREADS if set, else the hardware concurrency.
inline std::size_t thread_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CATCHAIN_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<std::size_t>(v);
  }
  return n;
}

/// Runs fn(block) for block = 0..blocks-1 over the worker pool. Results must
/// be written per block so the outcome does not depend on the thread count.
template <class Fn>
void parallel_blocks(std::size_t blocks, Fn&& fn) {
  const std::size_t workers = std::min(thread_count(), blocks);
  if (workers <= 1) {
    for (std::size_t b = 0; b < blocks; ++b) fn(b);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t b = w; b < blocks; b += workers) fn(b);
    });
  }
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Covariates.

enum class CovariateKind { Iid, AR1, FiniteMarkov };
enum class IidDist { Gaussian, Constant, Uniform };
enum class CouplingMetric { Discrete, L1 };

inline std::string to_string(CouplingMetric m) { return m == CouplingMetric::Discrete ? "discrete" : "l1"; }

struct CovariateModel {
  CovariateKind kind = CovariateKind::Iid;
  std::size_t dim = 0;
  IidDist dist = IidDist::Constant;
  // Gaussian: mean a, sd b. Uniform: [a, b]. Constant: value a.
  // AR1: coefficient rho and Gaussian innovation sd b, mean zero.
  double a = 0.0;
  double b = 1.0;
  double rho = 0.0;
  std::vector<std::vector<double>> P;          // finite-state transition matrix
  std::vector<std::vector<double>> emissions;  // state -> covariate vector

  static CovariateModel none() { return {}; }
  static CovariateModel constant(std::size_t d, double value) {
    CovariateModel m;
    m.dim = d;
    m.a = value;
    return m;
  }
  static CovariateModel gaussian(std::size_t d, double mean, double sd) {
    CovariateModel m;
    m.dim = d;
    m.dist = IidDist::Gaussian;
    m.a = mean;
    m.b = sd;
    return m;
  }
  static CovariateModel uniform(std::size_t d, double lo, double hi) {
    CovariateModel m;
    m.dim = d;
    m.dist = IidDist::Uniform;
    m.a = lo;
    m.b = hi;
    return m;
  }
  static CovariateModel ar1(std::size_t d, double rho, double innovation_sd) {
    CovariateModel m;
    m.kind = CovariateKind::AR1;
    m.dim = d;
    m.dist = IidDist::Gaussian;
    m.rho = rho;
    m.b = innovation_sd;
    return m;
  }
  static CovariateModel markov(std::vector<std::vector<double>> P, std::vector<std::vector<double>> emissions) {
    CovariateModel m;
    m.kind = CovariateKind::FiniteMarkov;
    m.dim = emissions.empty() ? 0 : emissions[0].size();
    m.P = std::move(P);
    m.emissions = std::move(emissions);
    return m;
  }

  std::size_t states() const { return P.size(); }

  void validate() const {
    switch (kind) {
      case CovariateKind::Iid:
        if (dist == IidDist::Gaussian && !(b > 0.0)) throw DomainError("gaussian covariates need sd > 0");
        if (dist == IidDist::Uniform && !(b > a)) throw DomainError("uniform covariates need lo < hi");
        break;
      case CovariateKind::AR1:
        if (!(std::abs(rho) < 1.0)) throw DomainError("AR1 covariates need |rho| < 1");
        if (!(b > 0.0)) throw DomainError("AR1 covariates need innovation sd > 0");
        break;
      case CovariateKind::FiniteMarkov: {
        if (P.empty() || emissions.size() != P.size()) throw DimensionError("markov covariates: one emission per state");
        for (const auto& row : P) {
          if (row.size() != P.size()) throw DimensionError("markov covariates: P must be square");
          ProbVector check(row, 1e-10);
        }
        for (const auto& e : emissions)
          if (e.size() != dim) throw DimensionError("markov covariates: emissions must share one dimension");
        break;
      }
    }
  }

  /// Finite support when the covariate takes finitely many values.
  std::vector<std::vector<double>> support() const {
    if (kind == CovariateKind::FiniteMarkov) return emissions;
    if (kind == CovariateKind::Iid && dist == IidDist::Constant) return {std::vector<double>(dim, a)};
    return {};
  }
};

/// Invariant law of a row-stochastic matrix by power iteration on the lazy
/// chain (I + P)/2, which converges for any irreducible P.
inline std::vector<double> invariant_distribution(const std::vector<std::vector<double>>& P, double tol = 1e-15,
                                                  std::size_t max_iter = 1000000) {
  const std::size_t n = P.size();
  std::vector<double> pi(n, 1.0 / static_cast<double>(n)), next(n);
  for (std::size_t it = 0; it < max_iter; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) next[j] += pi[i] * 0.5 * (P[i][j] + (i == j ? 1.0 : 0.0));
    double s = 0.0, diff = 0.0;
    for (double v : next) s += v;
    for (std::size_t j = 0; j < n; ++j) {
      next[j] /= s;
      diff += std::abs(next[j] - pi[j]);
    }
    pi.swap(next);
    if (diff < tol) break;
  }
  return pi;
}

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// E|mu + sd Z| for standard normal Z.
inline double gaussian_mean_abs(double mu, double sd) {
  if (sd == 0.0) return std::abs(mu);
  return sd * std::sqrt(2.0 / std::numbers::pi) * std::exp(-mu * mu / (2 * sd * sd)) +
         mu * (1.0 - 2.0 * normal_cdf(-mu / sd));
}

/// (E|sd Z|^p)^{1/p}.
inline double gaussian_abs_moment_root(double sd, double p) {
  const double m = std::pow(2.0, p / 2.0) * gsl_sf_gamma((p + 1.0) / 2.0) / std::sqrt(std::numbers::pi);
  return sd * std::pow(m, 1.0 / p);
}

/// (E|U|^p)^{1/p} for U uniform on [lo, hi].
inline double uniform_abs_moment_root(double lo, double hi, double p) {
  auto prim = [p](double x) { return std::copysign(std::pow(std::abs(x), p + 1.0), x) / (p + 1.0); };
  return std::pow((prim(hi) - prim(lo)) / (hi - lo), 1.0 / p);
}

}  // namespace detail

/// E|X_0|_1 under the stationary law.
inline double covariate_mean_abs(const CovariateModel& m) {
  m.validate();
  const double d = static_cast<double>(m.dim);
  switch (m.kind) {
    case CovariateKind::Iid:
      switch (m.dist) {
        case IidDist::Constant: return d * std::abs(m.a);
        case IidDist::Gaussian: return d * detail::gaussian_mean_abs(m.a, m.b);
        case IidDist::Uniform: {
          const double lo = m.a, hi = m.b;
          const double v = lo >= 0 ? (lo + hi) / 2 : hi <= 0 ? -(lo + hi) / 2 : (lo * lo + hi * hi) / (2 * (hi - lo));
          return d * v;
        }
      }
      break;
    case CovariateKind::AR1: return d * detail::gaussian_mean_abs(0.0, m.b / std::sqrt(1 - m.rho * m.rho));
    case CovariateKind::FiniteMarkov: {
      const auto pi = invariant_distribution(m.P);
      double s = 0.0;
      for (std::size_t i = 0; i < pi.size(); ++i) {
        double n1 = 0.0;
        for (double v : m.emissions[i]) n1 += std::abs(v);
        s += pi[i] * n1;
      }
      return s;
    }
  }
  return 0.0;
}

/// ||X_0||_p with |.| the l1 norm; p = inf gives the essential sup. For
/// d > 1 continuous coordinates the Minkowski bound sum_i ||X_{0,i}||_p is
/// returned, which is an upper bound.
inline double covariate_lp_norm(const CovariateModel& m, double p) {
  m.validate();
  if (!(p >= 1.0)) throw DomainError("covariate_lp_norm: p must be >= 1");
  const double d = static_cast<double>(m.dim);
  const bool inf = std::isinf(p);
  if (m.kind == CovariateKind::FiniteMarkov || (m.kind == CovariateKind::Iid && m.dist == IidDist::Constant)) {
    const auto sup = m.support();
    std::vector<double> w(sup.size(), 1.0);
    if (m.kind == CovariateKind::FiniteMarkov) w = invariant_distribution(m.P);
    double best = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < sup.size(); ++i) {
      double n1 = 0.0;
      for (double v : sup[i]) n1 += std::abs(v);
      if (w[i] > 0.0) best = std::max(best, n1);
      if (!inf) acc += w[i] * std::pow(n1, p);
    }
    return inf ? best : std::pow(acc, 1.0 / p);
  }
  if (m.kind == CovariateKind::Iid && m.dist == IidDist::Uniform) {
    if (inf) return d * std::max(std::abs(m.a), std::abs(m.b));
    return d * detail::uniform_abs_moment_root(m.a, m.b, p);
  }
  if (inf) return std::numeric_limits<double>::infinity();
  if (m.kind == CovariateKind::AR1) return d * detail::gaussian_abs_moment_root(m.b / std::sqrt(1 - m.rho * m.rho), p);
  // Gaussian with mean: Minkowski |mu| + sd-moment per coordinate.
  return d * (std::abs(m.a) + detail::gaussian_abs_moment_root(m.b, p));
}

/// A covariate path together with the hidden states of a finite chain.
struct CovariatePath {
  std::size_t dim = 0;
  std::vector<double> x;     // rows oldest first
  std::vector<int> states;   // finite-state models only
  std::size_t length() const { return dim == 0 ? states.size() : x.size() / dim; }
};

inline CovariatePath sample_covariate_path(const CovariateModel& m, std::size_t length, SeededRng& rng) {
  m.validate();
  CovariatePath out;
  out.dim = m.dim;
  out.x.assign(length * m.dim, 0.0);
  const std::size_t d = m.dim;
  switch (m.kind) {
    case CovariateKind::Iid:
      for (std::size_t t = 0; t < length; ++t)
        for (std::size_t i = 0; i < d; ++i) {
          double v = m.a;
          if (m.dist == IidDist::Gaussian) v = m.a + m.b * rng.normal();
          else if (m.dist == IidDist::Uniform) v = m.a + (m.b - m.a) * rng.uniform();
          out.x[t * d + i] = v;
        }
      break;
    case CovariateKind::AR1: {
      std::vector<double> cur(d);
      const double sd0 = m.b / std::sqrt(1.0 - m.rho * m.rho);
      for (std::size_t i = 0; i < d; ++i) cur[i] = sd0 * rng.normal();
      for (std::size_t t = 0; t < length; ++t) {
        if (t > 0)
          for (std::size_t i = 0; i < d; ++i) cur[i] = m.rho * cur[i] + m.b * rng.normal();
        std::copy(cur.begin(), cur.end(), out.x.begin() + static_cast<std::ptrdiff_t>(t * d));
      }
      break;
    }
    case CovariateKind::FiniteMarkov: {
      const auto pi = invariant_distribution(m.P);
      int s = rng.categorical(pi);
      out.states.resize(length);
      for (std::size_t t = 0; t < length; ++t) {
        if (t > 0) s = rng.categorical(m.P[static_cast<std::size_t>(s)]);
        out.states[t] = s;
        std::copy(m.emissions[static_cast<std::size_t>(s)].begin(), m.emissions[static_cast<std::size_t>(s)].end(),
                  out.x.begin() + static_cast<std::ptrdiff_t>(t * d));
      }
      break;
    }
  }
  return out;
}

/// Stationary covariate draw of `length` rows (oldest first, flattened).
inline std::vector<double> sample_covariates(const CovariateModel& m, std::size_t length, SeededRng& rng) {
  return sample_covariate_path(m, length, rng).x;
}

// ---------------------------------------------------------------------------
// Paths.

struct SamplePath {
  std::vector<Category> y;
  std::size_t dim = 0;
  std::vector<double> x;       // rows aligned with y
  std::size_t latent_dim = 0;
  std::vector<double> lambda;  // rows aligned with y, empty if no latent process
  std::size_t burnin_used = 0;
  double stationarity_gap_bound = 0.0;

  std::size_t length() const { return y.size(); }

  /// Columns t, y, x_1..x_d.
  std::string to_csv() const {
    std::vector<std::string> header{"t", "y"};
    for (std::size_t i = 1; i <= dim; ++i) header.push_back("x_" + std::to_string(i));
    CsvWriter w(header);
    std::vector<double> row;
    for (std::size_t t = 0; t < y.size(); ++t) {
      row.assign({static_cast<double>(t + 1), static_cast<double>(y[t])});
      for (std::size_t i = 0; i < dim; ++i) row.push_back(x[t * dim + i]);
      w.row(row);
    }
    return w.str();
  }

  /// Columns t, lambda_1..lambda_k; empty when there is no latent process.
  std::string latent_csv() const {
    if (lambda.empty()) return {};
    std::vector<std::string> header{"t"};
    for (std::size_t i = 1; i <= latent_dim; ++i) header.push_back("lambda_" + std::to_string(i));
    CsvWriter w(header);
    std::vector<double> row;
    for (std::size_t t = 0; t < y.size(); ++t) {
      row.assign({static_cast<double>(t + 1)});
      for (std::size_t i = 0; i < latent_dim; ++i) row.push_back(lambda[t * latent_dim + i]);
      w.row(row);
    }
    return w.str();
  }
};

namespace detail {

/// Runs the chain for times 1..T. `init` is the past before time 1, most
/// recent first (missing lags read as category 0). x holds T rows, row t-1
/// being x_t; covariates before time 1 read as zero.
inline std::vector<Category> run_chain(const KernelHandle& k, std::span<const double> x, std::span<const Category> init,
                                       std::size_t T, SeededRng& rng, std::vector<double>* lambda = nullptr) {
  const std::size_t d = k.cov_dim;
  if (d > 0 && x.size() < T * d) throw DimensionError("simulation: covariate path shorter than the horizon");
  std::vector<Category> hist(init.rbegin(), init.rend());
  const std::size_t offset = hist.size();
  hist.reserve(offset + T);
  std::vector<double> p(k.N());
  const bool want_lambda = lambda && k.latent;
  if (want_lambda) lambda->assign(T * k.latent_dim, 0.0);
  for (std::size_t t = 1; t <= T; ++t) {
    HistoryView h{hist, d > 0 ? x.subspan(0, t * d) : std::span<const double>{}, d, false};
    k.probs(h, p);
    if (want_lambda) k.latent_state(h, std::span<double>(lambda->data() + (t - 1) * k.latent_dim, k.latent_dim));
    hist.push_back(rng.categorical(p));
  }
  return {hist.begin() + static_cast<std::ptrdiff_t>(offset), hist.end()};
}

}  // namespace detail

/// Smallest n >= 1 with sum_{l < window} b*_{n+l} <= eps.
inline std::size_t certified_burnin(const DecaySeq& bstar, std::size_t window, double eps,
                                    std::size_t max_burnin = 1000000) {
  if (!(eps > 0.0)) throw DomainError("burn-in: eps must be > 0");
  if (window == 0) throw DomainError("burn-in: window must be >= 1");
  double s = 0.0;
  for (std::size_t l = 0; l < window; ++l) s += bstar.at(1 + l);
  for (std::size_t n = 1; n <= max_burnin; ++n) {
    if (s <= eps) return n;
    s += bstar.at(n + window) - bstar.at(n);
    if (s < 0.0) s = 0.0;
  }
  throw HorizonError("burn-in: eps = " + std::to_string(eps) + " not reached within " + std::to_string(max_burnin) +
                     " steps");
}

inline double window_gap(const DecaySeq& bstar, std::size_t burnin, std::size_t window) {
  double s = 0.0;
  for (std::size_t l = 0; l < window; ++l) s += bstar.at(burnin + l);
  return s;
}

/// House-of-cards sequence certified for the kernel.
inline DecaySeq kernel_bstar(const KernelHandle& k, std::size_t horizon = 400) {
  return bstar_from_b(b_seq_certified(k, horizon), horizon);
}

/// Forward simulation from the all-zero past: n* steps discarded, then the
/// window returned. x must hold n* + window rows (use the CovariateModel
/// overload to generate them).
inline SamplePath sample_forward(const KernelHandle& k, std::span<const double> x, std::size_t window, double eps,
                                 SeededRng& rng, const DecaySeq* bstar_in = nullptr) {
  const DecaySeq bstar = bstar_in ? *bstar_in : kernel_bstar(k);
  const std::size_t n = certified_burnin(bstar, window, eps);
  const std::size_t d = k.cov_dim;
  const std::size_t T = n + window;
  if (d > 0 && x.size() < T * d) {
    throw HorizonError("sample_forward: covariate path has " + std::to_string(x.size() / d) + " rows, need " +
                       std::to_string(T));
  }
  std::vector<double> lam;
  auto y = detail::run_chain(k, x, {}, T, rng, &lam);
  SamplePath p;
  p.burnin_used = n;
  p.stationarity_gap_bound = window_gap(bstar, n, window);
  p.y.assign(y.begin() + static_cast<std::ptrdiff_t>(n), y.end());
  p.dim = d;
  if (d > 0) p.x.assign(x.begin() + static_cast<std::ptrdiff_t>(n * d), x.begin() + static_cast<std::ptrdiff_t>(T * d));
  if (!lam.empty()) {
    p.latent_dim = k.latent_dim;
    p.lambda.assign(lam.begin() + static_cast<std::ptrdiff_t>(n * k.latent_dim), lam.end());
  }
  return p;
}

inline SamplePath sample_forward(const KernelHandle& k, const CovariateModel& cov, std::size_t window, double eps,
                                 SeededRng& rng, const DecaySeq* bstar_in = nullptr) {
  if (cov.dim != k.cov_dim) throw DimensionError("sample_forward: covariate model dimension differs from kernel");
  const DecaySeq bstar = bstar_in ? *bstar_in : kernel_bstar(k);
  const std::size_t n = certified_burnin(bstar, window, eps);
  SeededRng xr = rng.split(0xC0FFEE);
  const auto x = sample_covariates(cov, n + window, xr);
  return sample_forward(k, x, window, eps, rng, &bstar);
}

// ---------------------------------------------------------------------------
// Glued coupling.

struct CoupledPathPair {
  std::vector<Category> path1, path2;
  std::vector<unsigned char> mismatch;  // mismatch[t-1] = [path1_t != path2_t]
};

/// Ladder of L + 2 paths over times 1..L. Rung 0 runs kernel A on xA from
/// zA. Rung r >= 1 starts from zB and uses kernel B on xB at times t < r and
/// kernel A on xA at times t >= r. Consecutive rungs are glued by maximal
/// coupling at every time step, so rung L + 1 is a path of kernel B. Only
/// two rungs are held at once.
inline CoupledPathPair glued_coupling(const KernelHandle& kA, const KernelHandle& kB, std::span<const double> xA,
                                      std::span<const double> xB, std::span<const Category> zA,
                                      std::span<const Category> zB, std::size_t length, SeededRng& rng) {
  if (kA.categories != kB.categories) throw DimensionError("glued_coupling: kernels on different alphabets");
  if (kA.cov_dim != kB.cov_dim) throw DimensionError("glued_coupling: covariate dimensions differ");
  const std::size_t d = kA.cov_dim, L = length, N = kA.N();
  if (d > 0 && (xA.size() < L * d || xB.size() < L * d)) throw DimensionError("glued_coupling: covariate path too short");

  auto make_hist = [](std::span<const Category> z, std::size_t L) {
    std::vector<Category> h(z.rbegin(), z.rend());
    h.resize(z.size() + L, 0);
    return h;
  };
  std::vector<Category> prev = make_hist(zA, L), cur;
  const std::size_t offA = zA.size(), offB = zB.size();
  std::vector<double> p(N), q(N);

  // Rung 0.
  for (std::size_t t = 1; t <= L; ++t) {
    HistoryView h{std::span<const Category>(prev.data(), offA + t - 1), xA.subspan(0, t * d), d, false};
    kA.probs(h, p);
    prev[offA + t - 1] = rng.categorical(p);
  }
  const std::vector<Category> first(prev.begin() + static_cast<std::ptrdiff_t>(offA), prev.end());
  std::size_t prev_off = offA;

  auto rung_kernel = [&](std::size_t r, std::size_t t) -> std::pair<const KernelHandle*, std::span<const double>> {
    if (r >= 1 && t < r) return {&kB, xB};
    return {&kA, xA};
  };

  for (std::size_t r = 1; r <= L + 1; ++r) {
    cur = make_hist(zB, L);
    for (std::size_t t = 1; t <= L; ++t) {
      const auto [kp, xp] = rung_kernel(r - 1, t);
      const auto [kc, xc] = rung_kernel(r, t);
      HistoryView hp{std::span<const Category>(prev.data(), prev_off + t - 1), xp.subspan(0, t * d), d, false};
      HistoryView hc{std::span<const Category>(cur.data(), offB + t - 1), xc.subspan(0, t * d), d, false};
      kp->probs(hp, p);
      kc->probs(hc, q);
      cur[offB + t - 1] = sample_coupled_second(p, q, prev[prev_off + t - 1], rng);
    }
    prev.swap(cur);
    prev_off = offB;
  }
  CoupledPathPair out;
  out.path1 = first;
  out.path2.assign(prev.begin() + static_cast<std::ptrdiff_t>(offB), prev.end());
  out.mismatch.resize(L);
  for (std::size_t t = 0; t < L; ++t) out.mismatch[t] = out.path1[t] != out.path2[t];
  return out;
}

// ---------------------------------------------------------------------------
// Exact laws.

/// Law of Y_t by transfer-matrix iteration over the last-M-categories state,
/// M the kernel's exact memory. x holds rows for times 1..t; init is the past
/// before time 1, most recent first.
inline ProbVector exact_marginal_law(const KernelHandle& k, std::span<const double> x, std::span<const Category> init,
                                     std::size_t t) {
  if (!k.exact_memory || k.truncation.max_lag_y == kUnbounded) {
    throw UnsupportedError("exact_marginal_law: kernel has no finite memory");
  }
  if (t < 1) throw DomainError("exact_marginal_law: t must be >= 1");
  const std::size_t N = k.N(), M = k.truncation.max_lag_y, d = k.cov_dim;
  if (M > 0 && static_cast<double>(M) * std::log2(static_cast<double>(N)) > 16.0 + 1e-9) {
    throw UnsupportedError("exact_marginal_law: N^memory exceeds 2^16");
  }
  if (d > 0 && x.size() < t * d) throw DimensionError("exact_marginal_law: covariate path too short");
  const std::size_t S = detail::ipow(N, M);
  std::size_t code0 = 0, mult = 1;
  for (std::size_t m = 0; m < M; ++m) {
    const Category c = m < init.size() ? init[m] : 0;
    code0 += static_cast<std::size_t>(c) * mult;
    mult *= N;
  }
  std::vector<double> law(S, 0.0), next(S), p(N), last(N, 0.0);
  law[code0] = 1.0;
  std::vector<Category> ys(M);
  std::vector<double> xr;
  const std::size_t keep = S / std::max<std::size_t>(N, 1);
  for (std::size_t s = 1; s <= t; ++s) {
    std::fill(next.begin(), next.end(), 0.0);
    std::fill(last.begin(), last.end(), 0.0);
    xr.resize(s * d);
    for (std::size_t r = 0; r < s; ++r)
      std::copy_n(x.data() + (s - 1 - r) * d, d, xr.data() + r * d);
    for (std::size_t code = 0; code < S; ++code) {
      if (law[code] == 0.0) continue;
      detail::decode_history(code, N, ys);
      k.probs(HistoryView{ys, xr, d, true}, p);
      for (std::size_t y = 0; y < N; ++y) {
        const double w = law[code] * p[y];
        last[y] += w;
        if (M > 0) next[y + N * (code % keep)] += w;
      }
    }
    if (M > 0) law.swap(next);
  }
  return ProbVector(last, 1e-9);
}

// ---------------------------------------------------------------------------
// Covariate coupling coefficients.

/// a_t for t = 0..horizon: expected gamma-distance between two copies of the
/// covariate process started independently from the stationary law and then
/// coupled. iid: shared innovations. AR1: shared innovations after time 0.
/// Finite Markov: independent moves until meeting, then together.
inline DecaySeq covariate_coupling_coeffs(const CovariateModel& m, CouplingMetric metric, std::size_t horizon) {
  m.validate();
  std::vector<double> a(horizon + 1, 0.0);
  switch (m.kind) {
    case CovariateKind::Iid: {
      if (m.dist == IidDist::Constant) return DecaySeq(a);
      if (metric == CouplingMetric::Discrete) a[0] = 1.0;
      else {
        const double sd = m.dist == IidDist::Gaussian ? m.b : 0.0;
        a[0] = m.dist == IidDist::Gaussian ? static_cast<double>(m.dim) * 2.0 * sd / std::sqrt(std::numbers::pi)
                                           : static_cast<double>(m.dim) * (m.b - m.a) / 3.0;
      }
      return DecaySeq(a);
    }
    case CovariateKind::AR1: {
      if (m.dim == 0) return DecaySeq(a);
      if (metric == CouplingMetric::Discrete) {
        throw DivergenceError("AR1 covariates under the discrete metric: copies never meet, a_t = 1");
      }
      const double sx = m.b / std::sqrt(1.0 - m.rho * m.rho);
      const double a0 = static_cast<double>(m.dim) * 2.0 * sx / std::sqrt(std::numbers::pi);
      for (std::size_t t = 0; t <= horizon; ++t) a[t] = a0 * std::pow(std::abs(m.rho), static_cast<double>(t));
      if (m.rho == 0.0) return DecaySeq(a);
      return DecaySeq(a, TailModel::geometric(std::abs(m.rho)));
    }
    case CovariateKind::FiniteMarkov: {
      const std::size_t S = m.states();
      const auto pi = invariant_distribution(m.P);
      std::vector<double> dist(S * S), next(S * S);
      for (std::size_t i = 0; i < S; ++i)
        for (std::size_t j = 0; j < S; ++j) dist[i * S + j] = pi[i] * pi[j];
      auto gamma = [&](std::size_t i, std::size_t j) {
        double g = 0.0;
        for (std::size_t c = 0; c < m.dim; ++c) g += std::abs(m.emissions[i][c] - m.emissions[j][c]);
        if (metric == CouplingMetric::Discrete) return g > 0.0 ? 1.0 : 0.0;
        return g;
      };
      for (std::size_t t = 0; t <= horizon; ++t) {
        double s = 0.0;
        for (std::size_t i = 0; i < S; ++i)
          for (std::size_t j = 0; j < S; ++j) s += dist[i * S + j] * gamma(i, j);
        a[t] = s;
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t i = 0; i < S; ++i)
          for (std::size_t j = 0; j < S; ++j) {
            const double w = dist[i * S + j];
            if (w == 0.0) continue;
            if (i == j) {
              for (std::size_t k = 0; k < S; ++k) next[k * S + k] += w * m.P[i][k];
            } else {
              for (std::size_t k = 0; k < S; ++k)
                for (std::size_t l = 0; l < S; ++l) next[k * S + l] += w * m.P[i][k] * m.P[j][l];
            }
          }
        dist.swap(next);
      }
      return DecaySeq(a, extrapolated_tail(a));
    }
  }
  return DecaySeq(a);
}

/// Plug-in binomial standard error of a proportion.
inline double binomial_se(double p, double n) { return std::sqrt(std::max(p * (1.0 - p), 0.0) / n); }

/// Monte Carlo summary of many independent glued ladders.
struct GluedStats {
  std::size_t replicas = 0;
  std::vector<double> mismatch;                // empirical P(y_t != ybar_t), t = 1..L
  std::vector<std::vector<double>> law1, law2;  // empirical laws of the outer paths at each t
};

/// Replicas are split into fixed blocks with their own streams, so the result
/// does not depend on the number of worker threads.
inline GluedStats glued_mismatch_rates(const KernelHandle& kA, const KernelHandle& kB, std::span<const double> xA,
                                       std::span<const double> xB, std::span<const Category> zA,
                                       std::span<const Category> zB, std::size_t length, std::size_t replicas,
                                       const SeededRng& root, std::size_t blocks = 64) {
  const std::size_t N = kA.N();
  blocks = std::max<std::size_t>(1, std::min(blocks, replicas));
  std::vector<std::vector<double>> mis(blocks, std::vector<double>(length, 0.0));
  std::vector<std::vector<double>> c1(blocks, std::vector<double>(length * N, 0.0)), c2 = c1;
  parallel_blocks(blocks, [&](std::size_t b) {
    SeededRng rng = root.split(b);
    const std::size_t lo = replicas * b / blocks, hi = replicas * (b + 1) / blocks;
    for (std::size_t r = lo; r < hi; ++r) {
      const auto pair = glued_coupling(kA, kB, xA, xB, zA, zB, length, rng);
      for (std::size_t t = 0; t < length; ++t) {
        mis[b][t] += pair.mismatch[t];
        c1[b][t * N + static_cast<std::size_t>(pair.path1[t])] += 1.0;
        c2[b][t * N + static_cast<std::size_t>(pair.path2[t])] += 1.0;
      }
    }
  });
  GluedStats g;
  g.replicas = replicas;
  g.mismatch.assign(length, 0.0);
  g.law1.assign(length, std::vector<double>(N, 0.0));
  g.law2 = g.law1;
  const double R = static_cast<double>(replicas);
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t t = 0; t < length; ++t) {
      g.mismatch[t] += mis[b][t] / R;
      for (std::size_t c = 0; c < N; ++c) {
        g.law1[t][c] += c1[b][t * N + c] / R;
        g.law2[t][c] += c2[b][t * N + c] / R;
      }
    }
  return g;
}

/// Empirical laws of Y_1..Y_L for independent single-path runs from z.
inline std::vector<std::vector<double>> single_path_laws(const KernelHandle& k, std::span<const double> x,
                                                         std::span<const Category> z, std::size_t length,
                                                         std::size_t replicas, const SeededRng& root,
                                                         std::size_t blocks = 64) {
  const std::size_t N = k.N();
  blocks = std::max<std::size_t>(1, std::min(blocks, replicas));
  std::vector<std::vector<double>> cnt(blocks, std::vector<double>(length * N, 0.0));
  parallel_blocks(blocks, [&](std::size_t b) {
    SeededRng rng = root.split(b);
    const std::size_t lo = replicas * b / blocks, hi = replicas * (b + 1) / blocks;
    for (std::size_t r = lo; r < hi; ++r) {
      const auto y = detail::run_chain(k, x, z, length, rng);
      for (std::size_t t = 0; t < length; ++t) cnt[b][t * N + static_cast<std::size_t>(y[t])] += 1.0;
    }
  });
  std::vector<std::vector<double>> law(length, std::vector<double>(N, 0.0));
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t t = 0; t < length; ++t)
      for (std::size_t c = 0; c < N; ++c) law[t][c] += cnt[b][t * N + c] / static_cast<double>(replicas);
  return law;
}

/// 4-sigma band for the TV between two independent empirical laws of sizes
/// n1 and n2: half the sum of per-cell bands, with the pooled cell frequency.
inline double tv_band(const std::vector<double>& p1, const std::vector<double>& p2, double n1, double n2,
                      double sigmas = 4.0) {
  double band = 0.0;
  for (std::size_t c = 0; c < p1.size(); ++c) {
    const double pool = (p1[c] * n1 + p2[c] * n2) / (n1 + n2);
    band += sigmas * std::sqrt(std::max(pool * (1 - pool), 0.0) * (1.0 / n1 + 1.0 / n2));
  }
  return 0.5 * band;
}

}  // namespace catchain
