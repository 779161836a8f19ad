#pragma once

// The house-of-cards relaxation sequence b*_m and the bounds assembled from
// it: relaxation, perturbation, the coupled-path mismatch bound, beta-mixing
// and tau-dependence curves, and the heredity exponent.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "catchain/decay_seq.hpp"
#include "catchain/error.hpp"

namespace catchain {

namespace detail {

inline void check_b(const DecaySeq& b, const char* who) {
  if (b.at(0) >= 1.0) throw ContractionError(std::string(who) + ": b_0 = " + std::to_string(b.at(0)) + " >= 1");
  b.require_nonincreasing(who);
}

}  // namespace detail

/// b*_0 = b_0 and b*_n = P(S_n = 0) for the chain started at 0 with
/// P(i, i+1) = 1 - b_i, P(i, 0) = b_i. Exact forward iteration, O(horizon^2).
/// The returned sequence has length horizon + 1 and a tail model fitted on
/// its second half.
inline DecaySeq bstar_from_b(const DecaySeq& b, std::size_t horizon) {
  detail::check_b(b, "bstar_from_b");
  const auto bb = b.prefix(horizon + 1);
  std::vector<double> dist(horizon + 2, 0.0), next(horizon + 2, 0.0);
  dist[0] = 1.0;
  std::vector<double> out(horizon + 1, 0.0);
  out[0] = bb[0];
  for (std::size_t n = 1; n <= horizon; ++n) {
    std::fill(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(n + 1), 0.0);
    double reset = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = dist[i];
      if (w == 0.0) continue;
      reset += w * bb[i];
      next[i + 1] = w * (1.0 - bb[i]);
    }
    next[0] = reset;
    std::swap(dist, next);
    out[n] = reset;
  }
  return DecaySeq(out, extrapolated_tail(out));
}

/// Same quantity through the renewal equation u_n = sum_k f_k u_{n-k},
/// u_0 = 1, with first-return law f_1 = b_0, f_k = b_{k-1} prod_{m<=k-2}(1-b_m).
/// Index 0 holds b_0 to match bstar_from_b.
inline DecaySeq bstar_renewal_oracle(const DecaySeq& b, std::size_t horizon) {
  detail::check_b(b, "bstar_renewal_oracle");
  const auto bb = b.prefix(horizon + 1);
  std::vector<double> f(horizon + 1, 0.0);
  double survive = 1.0;
  for (std::size_t k = 1; k <= horizon; ++k) {
    f[k] = bb[k - 1] * survive;
    survive *= 1.0 - bb[k - 1];
  }
  std::vector<double> u(horizon + 1, 0.0);
  u[0] = 1.0;
  for (std::size_t n = 1; n <= horizon; ++n) {
    double s = 0.0;
    for (std::size_t k = 1; k <= n; ++k) s += f[k] * u[n - k];
    u[n] = s;
  }
  u[0] = bb[0];
  return DecaySeq(u, extrapolated_tail(u));
}

/// Bracket for sum_{n>=1} b*_n = 1/prod_{m>=0}(1-b_m) - 1.
struct RenewalMass {
  double lower = 0.0;
  double upper = 0.0;
};

inline RenewalMass bstar_mass_after_zero(const DecaySeq& b) {
  detail::check_b(b, "bstar_mass");
  if (!b.summable()) throw DivergenceError("b is not summable, so sum of b* diverges");
  double logp = 0.0;
  const std::size_t n = b.size();
  for (std::size_t m = 0; m < n; ++m) logp += std::log1p(-b.values()[m]);
  // -x/(1-x) <= log(1-x) <= -x on the tail, with x <= b_n there.
  const double s = b.tail_sum();
  const double bn = b.at(n);
  const double log_hi = logp - s;
  const double log_lo = logp - s / (1.0 - bn);
  return {std::exp(-log_hi) - 1.0, std::exp(-log_lo) - 1.0};
}

/// TV bound between time-t marginals of one kernel from two pasts: b*_{t-1}.
inline double relaxation_bound(const DecaySeq& bstar, long t) {
  if (t < 1) throw DomainError("relaxation_bound: t must be >= 1");
  return bstar.at(static_cast<std::size_t>(t - 1));
}

struct PerturbationBound {
  double value = 0.0;
  double partial_sum = 0.0;       // sum_{m=0}^{horizon} b*_m
  double tail = 0.0;              // closed-form remainder used in `value`
  double truncation_error = 0.0;  // width of the remainder bracket times sup TV
  bool truncated = false;
};

/// (1 + sum_{m>=0} b*_m) * sup_kernel_tv, with b* built from b. The remainder
/// past `horizon` comes from the closed form of the full sum, taken at its
/// upper bracket.
inline PerturbationBound perturbation_bound(const DecaySeq& b, const DecaySeq& bbar, double sup_kernel_tv,
                                            std::size_t horizon) {
  if (!(sup_kernel_tv >= 0.0 && sup_kernel_tv <= 1.0)) throw DomainError("perturbation_bound: sup TV must lie in [0,1]");
  if (!b.summable()) throw DivergenceError("perturbation_bound: b not summable");
  if (!bbar.summable()) throw DivergenceError("perturbation_bound: bbar not summable");
  const auto bstar = bstar_from_b(b, horizon);
  PerturbationBound r;
  for (double v : bstar.values()) r.partial_sum += v;
  const auto mass = bstar_mass_after_zero(b);
  const double computed_after_zero = r.partial_sum - bstar.values()[0];
  r.tail = std::max(0.0, mass.upper - computed_after_zero);
  r.truncation_error = (mass.upper - mass.lower) * sup_kernel_tv;
  r.truncated = r.tail > 0.0;
  r.value = (1.0 + r.partial_sum + r.tail) * sup_kernel_tv;
  return r;
}

/// Mismatch bound at times t = 1..delta.size() for the outermost pair of the
/// glued coupling: b*_{t-1} [if the pasts differ] + delta_t
/// + sum_{l=0}^{t-2} b*_l delta_{t-l-1}. delta[t-1] holds the sup TV between
/// the two kernels at time t.
inline std::vector<double> dyn1_bound(const DecaySeq& bstar, const std::vector<double>& delta, bool pasts_differ = true) {
  const std::size_t T = delta.size();
  std::vector<double> out(T, 0.0);
  for (std::size_t t = 1; t <= T; ++t) {
    double v = (pasts_differ ? bstar.at(t - 1) : 0.0) + delta[t - 1];
    for (std::size_t l = 0; l + 2 <= t; ++l) v += bstar.at(l) * delta[t - l - 2];
    out[t - 1] = v;
  }
  return out;
}

enum class CurveKind { Beta, Tau };

inline std::string to_string(CurveKind k) { return k == CurveKind::Beta ? "beta" : "tau"; }

/// g_j (beta) or h_j (tau) for j = 1..J, and the resulting bound on the
/// dependence coefficient for n = 1..n_max.
struct DependenceBoundCurve {
  CurveKind kind = CurveKind::Beta;
  std::vector<double> terms;  // terms[j-1] = g_j or h_j
  std::vector<double> kappa;  // kappa[j-1] = kappa_j
  std::vector<double> bound;  // bound[n-1] = sum_{j>=n} g_j or sup_{j>=n} h_j
  TailModel terms_tail;       // extrapolation of the terms past J
  double tail_sum = 0.0;      // extrapolated remainder past J (beta only)
  DecaySeq bstar, coupling, e;
  double exp_abs_x0 = 0.0;

  double term(std::size_t j) const { return terms.at(j - 1); }
  double at(std::size_t n) const { return bound.at(n - 1); }
};

namespace detail {

inline DependenceBoundCurve dependence_curve(CurveKind kind, const DecaySeq& bstar, const DecaySeq& c,
                                             const DecaySeq& e, double exp_abs_x0, std::size_t n_max,
                                             std::size_t horizon) {
  if (n_max < 1) throw DomainError("dependence bound: n must be >= 1");
  if (!(exp_abs_x0 >= 0.0) || !std::isfinite(exp_abs_x0)) throw DomainError("dependence bound: E|X0| must be finite");
  if (!bstar.summable()) throw DivergenceError("dependence bound: b* is not summable");
  if (!e.summable()) throw DivergenceError("dependence bound: e is not summable");
  if (kind == CurveKind::Beta && !c.summable()) throw DivergenceError("beta bound: c is not summable");
  const std::size_t J = std::max({horizon, 2 * n_max + 2, std::size_t{64}});
  const auto bs = bstar.prefix(J + 1);
  const auto cc = c.prefix(J + 1);
  const auto ee = e.prefix(J + 1);
  std::vector<double> e_tail(J + 2, 0.0);
  e_tail[J + 1] = e.sum_from(J + 1);
  for (std::size_t s = J + 1; s-- > 0;) e_tail[s] = e_tail[s + 1] + ee[s];

  DependenceBoundCurve out;
  out.kind = kind;
  out.kappa.assign(J, 0.0);
  out.terms.assign(J, 0.0);
  for (std::size_t j = 1; j <= J; ++j) {
    double k = 0.0;
    for (std::size_t s = 0; s < j; ++s) k += ee[s] * cc[j - s];
    k += 2.0 * e_tail[j] * exp_abs_x0;
    out.kappa[j - 1] = k;
  }
  for (std::size_t j = 1; j <= J; ++j) {
    double g = bs[j - 1] + cc[j] + out.kappa[j - 1];
    for (std::size_t i = 0; i + 2 <= j; ++i) g += bs[i] * out.kappa[j - i - 2];
    out.terms[j - 1] = g;
  }
  out.terms_tail = extrapolated_tail(out.terms);
  DecaySeq tail_seq(out.terms, out.terms_tail);
  out.bound.assign(n_max, 0.0);
  if (kind == CurveKind::Beta) {
    out.tail_sum = tail_seq.tail_sum();
    double acc = out.tail_sum;
    std::vector<double> suffix(J + 1, 0.0);
    for (std::size_t j = J; j >= 1; --j) {
      acc += out.terms[j - 1];
      suffix[j - 1] = acc;
    }
    for (std::size_t n = 1; n <= n_max; ++n) out.bound[n - 1] = suffix[n - 1];
  } else {
    double acc = tail_seq.at(J);
    std::vector<double> suffix(J, 0.0);
    for (std::size_t j = J; j >= 1; --j) {
      acc = std::max(acc, out.terms[j - 1]);
      suffix[j - 1] = acc;
    }
    for (std::size_t n = 1; n <= n_max; ++n) out.bound[n - 1] = suffix[n - 1];
  }
  out.bstar = bstar;
  out.coupling = c;
  out.e = e;
  out.exp_abs_x0 = exp_abs_x0;
  return out;
}

}  // namespace detail

/// beta_V(n) <= sum_{j>=n} g_j with
///   g_j = b*_{j-1} + c_j + kappa_j + sum_{i=0}^{j-2} b*_i kappa_{j-i-1},
///   kappa_j = sum_{s=0}^{j-1} e_s c_{j-s} + 2 E|X0| sum_{s>=j} e_s.
inline DependenceBoundCurve beta_bound(const DecaySeq& bstar, const DecaySeq& c, const DecaySeq& e, double exp_abs_x0,
                                       std::size_t n_max, std::size_t horizon = 0) {
  return detail::dependence_curve(CurveKind::Beta, bstar, c, e, exp_abs_x0, n_max, horizon);
}

/// tau_V(n) <= sup_{j>=n} h_j, h_j as g_j with a_j in place of c_j.
inline DependenceBoundCurve tau_bound(const DecaySeq& bstar, const DecaySeq& a, const DecaySeq& e, double exp_abs_x0,
                                      std::size_t n_max, std::size_t horizon = 0) {
  return detail::dependence_curve(CurveKind::Tau, bstar, a, e, exp_abs_x0, n_max, horizon);
}

/// kappa' = min(eta - 1, (kappa - 1)(q + 2)/(q + p + 1)). eta may be +inf.
inline double heredity_exponent(double eta, double kappa, double p, double q) {
  if (!(eta > 1.0) || !(kappa > 1.0) || !(q > 0.0) || !(p >= 1.0) || !std::isfinite(kappa) || !std::isfinite(p) ||
      !std::isfinite(q)) {
    throw DomainError("heredity_exponent: need eta > 1, kappa > 1, q > 0, p >= 1");
  }
  return std::min(eta - 1.0, (kappa - 1.0) * (q + 2.0) / (q + p + 1.0));
}

struct DecayTransferReport {
  std::vector<double> partial_sums;  // partial_sums[n] = sum_{m<=n} m^k b*_m
  double increment_ratio = 0.0;      // last-decile increment / total
  bool stabilized = false;           // increment_ratio < 1e-3
  bool has_rate = false;
  double fitted_rate = 0.0;          // exp(slope of log b*_m), geometric b only
};

/// Moment transfer diagnostic: partial sums of m^k b*_m up to horizon.
inline DecayTransferReport decay_transfer_check(const DecaySeq& b, int k, std::size_t horizon) {
  if (k < 0) throw DomainError("decay_transfer_check: k must be >= 0");
  const auto bstar = bstar_from_b(b, horizon);
  DecayTransferReport r;
  r.partial_sums.assign(horizon + 1, 0.0);
  double acc = 0.0;
  for (std::size_t m = 0; m <= horizon; ++m) {
    acc += std::pow(static_cast<double>(m), k) * bstar.values()[m];
    r.partial_sums[m] = acc;
  }
  const std::size_t cut = horizon - horizon / 10;
  const double total = r.partial_sums[horizon];
  r.increment_ratio = total > 0.0 ? (total - r.partial_sums[cut]) / total : 0.0;
  r.stabilized = r.increment_ratio < 1e-3;
  if (b.tail().kind == TailKind::Geometric) {
    const auto fit = fit_decay(bstar.values(), 1);
    if (fit.geometric.n >= 3) {
      r.has_rate = true;
      r.fitted_rate = fit.rate();
    }
  }
  return r;
}

}  // namespace catchain
