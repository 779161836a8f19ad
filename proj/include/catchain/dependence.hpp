#pragma once

// Model-level dependence certificates (beta / tau bound curves), exact
// beta-mixing of small joint chains, and the heredity bound for functionals.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "catchain/coupling_bounds.hpp"
#include "catchain/csv.hpp"
#include "catchain/decay_seq.hpp"
#include "catchain/error.hpp"
#include "catchain/kernels.hpp"
#include "catchain/model_zoo.hpp"
#include "catchain/simulate.hpp"

namespace catchain {

struct CertificateOptions {
  CouplingMetric metric = CouplingMetric::L1;
  double p = std::numeric_limits<double>::infinity();  // moment order for the discrete metric
  std::size_t n_max = 40;
  std::size_t horizon = 400;
};

struct DependenceCertificate {
  std::string model_id;
  CouplingMetric metric = CouplingMetric::L1;
  double p = 0.0, q = 0.0;
  DecaySeq b, bstar, a, coupling, e;  // coupling = c_t (discrete) or a_t (l1)
  double exp_abs_x0 = 0.0;
  double x0_norm = 0.0;  // ||X_0||_p, discrete metric only
  DependenceBoundCurve curve;
  DecayFit decay;

  std::string to_csv(const std::vector<double>& empirical = {}) const {
    std::vector<std::string> header{"n", "bound"};
    if (!empirical.empty()) header.push_back("empirical_lowerbound");
    CsvWriter w(header);
    for (std::size_t n = 1; n <= curve.bound.size(); ++n) {
      std::vector<double> row{static_cast<double>(n), curve.at(n)};
      if (!empirical.empty()) row.push_back(n - 1 < empirical.size() ? empirical[n - 1] : std::nan(""));
      w.row(row);
    }
    return w.str();
  }

  std::string summary() const {
    std::string s;
    s += "model: " + model_id + "\n";
    s += "coefficient: " + to_string(curve.kind) + "\n";
    s += "metric: " + to_string(metric) + "\n";
    s += "b0: " + format_double(b.at(0)) + "\n";
    s += "sum_bstar: " + format_double(bstar.total()) + "\n";
    s += "exp_abs_x0: " + format_double(exp_abs_x0) + "\n";
    s += "bound_at_1: " + format_double(curve.at(1)) + "\n";
    s += "decay: " + to_string(decay.kind) + "\n";
    if (decay.kind == TailKind::Geometric) s += "fitted_rate: " + format_double(decay.rate()) + "\n";
    if (decay.kind == TailKind::Polynomial) s += "fitted_exponent: " + format_double(decay.exponent()) + "\n";
    return s;
  }
};

/// c_t = max(1, 2 ||X_0||_p) a_t^{1/q}, 1/p + 1/q = 1; p = inf gives q = 1.
inline DecaySeq discrete_coupling_coeffs(const DecaySeq& a, double x0_norm, double p) {
  if (!(p >= 1.0)) throw DomainError("moment order p must be >= 1");
  const double q = std::isinf(p) ? 1.0 : (p == 1.0 ? std::numeric_limits<double>::infinity() : p / (p - 1.0));
  const double factor = std::max(1.0, 2.0 * x0_norm);
  if (!std::isfinite(factor)) {
    bool all_zero = true;
    for (double v : a.values()) all_zero = all_zero && (v == 0.0);
    if (!all_zero) throw DivergenceError("discrete metric: ||X_0||_p is infinite");
  }
  std::vector<double> c(a.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    const double v = a.values()[t];
    c[t] = v == 0.0 ? 0.0 : factor * (std::isinf(q) ? 1.0 : std::pow(v, 1.0 / q));
  }
  TailModel tail = a.tail();
  if (tail.kind == TailKind::Geometric) {
    if (std::isinf(q)) throw DivergenceError("discrete metric with p = 1: c_t does not decay");
    tail = TailModel::geometric(std::pow(tail.rate, 1.0 / q));
  }
  else if (tail.kind == TailKind::Polynomial) {
    if (std::isinf(q)) throw DivergenceError("discrete metric with p = 1: c_t does not decay");
    tail = TailModel::polynomial(factor * std::pow(tail.scale, 1.0 / q), tail.exponent / q);
  }
  return DecaySeq(std::move(c), tail);
}

/// Certificate from explicit ingredients.
inline DependenceCertificate certificate_from_ingredients(std::string id, const DecaySeq& b, const DecaySeq& a,
                                                          const DecaySeq& e, double exp_abs_x0, double x0_norm,
                                                          const CertificateOptions& opt) {
  DependenceCertificate c;
  c.model_id = std::move(id);
  c.metric = opt.metric;
  c.p = opt.p;
  c.q = std::isinf(opt.p) ? 1.0 : opt.p / (opt.p - 1.0);
  c.b = b;
  c.bstar = bstar_from_b(b, opt.horizon);
  c.a = a;
  c.e = e;
  c.exp_abs_x0 = exp_abs_x0;
  c.x0_norm = x0_norm;
  if (opt.metric == CouplingMetric::Discrete) {
    try {
      c.coupling = discrete_coupling_coeffs(a, x0_norm, opt.p);
    } catch (const DivergenceError& err) {
      throw DivergenceError(std::string("coupling coefficients c_t: ") + err.what());
    }
    if (!c.coupling.summable()) throw DivergenceError("coupling coefficients c_t are not summable");
    c.curve = beta_bound(c.bstar, c.coupling, e, exp_abs_x0, opt.n_max, opt.horizon);
  } else {
    c.coupling = a;
    c.curve = tau_bound(c.bstar, a, e, exp_abs_x0, opt.n_max, opt.horizon);
  }
  c.decay = fit_decay(c.curve.bound, c.curve.bound.size() / 4);
  return c;
}

/// Certificate of a kernel driven by a covariate model.
inline DependenceCertificate certificate_for_kernel(const KernelHandle& k, const CovariateModel& cov,
                                                    const CertificateOptions& opt = {}) {
  if (cov.dim != k.cov_dim) throw DimensionError("certificate: covariate dimension differs from the kernel's");
  const auto b = b_seq_certified(k, opt.horizon);
  const auto e = e_seq_certified(k, opt.horizon);
  DecaySeq a;
  try {
    a = covariate_coupling_coeffs(cov, opt.metric, opt.horizon);
  } catch (const DivergenceError& err) {
    throw DivergenceError(std::string("covariate coupling a_t: ") + err.what());
  }
  const double ex = covariate_mean_abs(cov);
  const double norm = opt.metric == CouplingMetric::Discrete ? covariate_lp_norm(cov, opt.p) : 0.0;
  return certificate_from_ingredients(k.name, b, a, e, ex, norm, opt);
}

inline DependenceCertificate certificate_for_model(const ModelSpec& spec, const CovariateModel& cov,
                                                   const CertificateOptions& opt = {}) {
  KernelOptions ko;
  ko.horizon = opt.horizon;
  return certificate_for_kernel(model_to_kernel(spec, ko), cov, opt);
}

// ---------------------------------------------------------------------------
// Exact beta-mixing of a finite joint chain.

/// Joint chain Z_t = (y_t..y_{t-M+1}, s_t..s_{t-R+1}) of a finite-memory
/// kernel and a finite-state covariate chain, with sparse transitions that
/// also record the emitted V_{t+1} = (Y_{t+1}, X_{t+1}) class.
struct JointChain {
  std::size_t N = 0, M = 0, S = 0, R = 1;
  std::size_t states = 0;
  struct Edge {
    std::size_t to;
    double prob;
    std::size_t v;  // y * (#x classes) + x class
  };
  std::vector<std::vector<Edge>> edges;
  std::vector<double> stationary;
  std::size_t v_classes = 0;
};

inline JointChain build_joint_chain(const KernelHandle& k, const CovariateModel& cov) {
  if (!k.exact_memory || k.truncation.max_lag_y == kUnbounded) {
    throw UnsupportedError("empirical beta: kernel has no finite memory");
  }
  JointChain J;
  J.N = k.N();
  J.M = k.truncation.max_lag_y;
  const bool has_x = k.cov_dim > 0;
  CovariateModel c = cov;
  if (!has_x) c = CovariateModel::markov({{1.0}}, {std::vector<double>{}});
  if (c.kind != CovariateKind::FiniteMarkov) {
    if (c.kind == CovariateKind::Iid && c.dist == IidDist::Constant) {
      c = CovariateModel::markov({{1.0}}, {std::vector<double>(c.dim, c.a)});
    } else {
      throw UnsupportedError("empirical beta: covariates must be a finite-state chain");
    }
  }
  c.validate();
  J.S = c.states();
  const std::size_t xlag = has_x ? (k.truncation.max_lag_x == kUnbounded ? 0 : k.truncation.max_lag_x) : 0;
  J.R = std::max<std::size_t>(1, xlag);
  const std::size_t ny = detail::ipow(J.N, J.M), ns = detail::ipow(J.S, J.R);
  const double size = static_cast<double>(ny) * static_cast<double>(ns);
  if (size > 65536.0) throw UnsupportedError("empirical beta: joint state space exceeds 2^16");
  J.states = ny * ns;

  // Emission classes: states with equal covariate vectors are merged.
  std::vector<std::size_t> xclass(J.S);
  std::map<std::vector<double>, std::size_t> ids;
  for (std::size_t s = 0; s < J.S; ++s) {
    auto it = ids.emplace(c.emissions[s], ids.size()).first;
    xclass[s] = it->second;
  }
  const std::size_t nx = ids.size();
  J.v_classes = J.N * nx;
  const std::size_t d = k.cov_dim;

  J.edges.assign(J.states, {});
  std::vector<Category> ys(J.M);
  std::vector<std::size_t> ss(J.R);
  std::vector<double> xs((J.R + 1) * d), p(J.N);
  for (std::size_t z = 0; z < J.states; ++z) {
    const std::size_t ycode = z % ny, scode = z / ny;
    detail::decode_history(ycode, J.N, ys);
    {
      std::size_t r = scode;
      for (std::size_t i = 0; i < J.R; ++i) {
        ss[i] = r % J.S;
        r /= J.S;
      }
    }
    for (std::size_t sn = 0; sn < J.S; ++sn) {
      const double ps = c.P[ss[0]][sn];
      if (ps == 0.0) continue;
      // x rows most recent first: x_{t+1} = g(sn), then g(s_t), ...
      for (std::size_t i = 0; i < d; ++i) xs[i] = c.emissions[sn][i];
      for (std::size_t l = 0; l < J.R; ++l)
        for (std::size_t i = 0; i < d; ++i) xs[(l + 1) * d + i] = c.emissions[ss[l]][i];
      k.probs(HistoryView{ys, std::span<const double>(xs.data(), (J.R + 1) * d), d, true}, p);
      std::size_t nscode = sn;
      std::size_t mult = J.S;
      for (std::size_t l = 0; l + 1 < J.R; ++l) {
        nscode += ss[l] * mult;
        mult *= J.S;
      }
      for (std::size_t y = 0; y < J.N; ++y) {
        const double w = ps * p[y];
        if (w == 0.0) continue;
        const std::size_t nycode = J.M == 0 ? 0 : y + J.N * (ycode % (ny / J.N));
        J.edges[z].push_back({nycode + ny * nscode, w, y * nx + xclass[sn]});
      }
    }
  }
  // Stationary law by iterating the lazy chain.
  std::vector<double> pi(J.states, 1.0 / static_cast<double>(J.states)), next(J.states);
  for (int it = 0; it < 200000; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t z = 0; z < J.states; ++z) {
      next[z] += 0.5 * pi[z];
      for (const auto& e : J.edges[z]) next[e.to] += 0.5 * pi[z] * e.prob;
    }
    double diff = 0.0;
    for (std::size_t z = 0; z < J.states; ++z) diff += std::abs(next[z] - pi[z]);
    pi.swap(next);
    if (diff < 1e-15) break;
  }
  J.stationary = std::move(pi);
  return J;
}

namespace detail {

inline void push_forward(const JointChain& J, const std::vector<double>& mu, std::vector<double>& out) {
  out.assign(J.states, 0.0);
  for (std::size_t z = 0; z < J.states; ++z) {
    if (mu[z] == 0.0) continue;
    for (const auto& e : J.edges[z]) out[e.to] += mu[z] * e.prob;
  }
}

/// sum over V-sequences of length w of |signed mass|, from signed measure nu.
inline double window_abs_mass(const JointChain& J, const std::vector<double>& nu, std::size_t w) {
  if (w == 0) {
    double s = 0.0;
    for (double v : nu) s += v;
    return std::abs(s);
  }
  std::vector<std::vector<double>> split(J.v_classes);
  std::vector<char> used(J.v_classes, 0);
  for (std::size_t z = 0; z < J.states; ++z) {
    if (nu[z] == 0.0) continue;
    for (const auto& e : J.edges[z]) {
      if (!used[e.v]) {
        split[e.v].assign(J.states, 0.0);
        used[e.v] = 1;
      }
      split[e.v][e.to] += nu[z] * e.prob;
    }
  }
  double total = 0.0;
  for (std::size_t v = 0; v < J.v_classes; ++v)
    if (used[v]) total += window_abs_mass(J, split[v], w - 1);
  return total;
}

}  // namespace detail

/// beta(n) = sum_z pi(z) TV(law of (V_n..V_{n+w-1}) | Z_0 = z, stationary law)
/// for n = 1..n_max. The past is summarized by the joint state, which
/// generates a sigma-field at least as large as the one of the observed past;
/// the future is cut to w steps, so the value is a lower bound for the
/// infinite-future coefficient relative to that filtration.
inline std::vector<double> empirical_beta_small(const KernelHandle& k, const CovariateModel& cov, std::size_t n_max,
                                                std::size_t window = 2) {
  if (window < 1 || window > 4) throw DomainError("empirical beta: window must lie in 1..4");
  const auto J = build_joint_chain(k, cov);
  std::vector<double> out(n_max, 0.0);
  std::vector<double> mu, tmp, nu(J.states);
  for (std::size_t z0 = 0; z0 < J.states; ++z0) {
    const double w0 = J.stationary[z0];
    if (w0 < 1e-300) continue;
    mu.assign(J.states, 0.0);
    mu[z0] = 1.0;
    // mu = law of Z_{n-1} given Z_0 = z0.
    for (std::size_t n = 1; n <= n_max; ++n) {
      if (n > 1) {
        detail::push_forward(J, mu, tmp);
        mu.swap(tmp);
      }
      for (std::size_t z = 0; z < J.states; ++z) nu[z] = mu[z] - J.stationary[z];
      out[n - 1] += w0 * 0.5 * detail::window_abs_mass(J, nu, window);
    }
  }
  return out;
}

/// beta(n) = 2 pi_0 pi_1 |1 - a - b|^n for the chain [[1-a, a], [b, 1-b]].
inline double two_state_beta(double a, double b, std::size_t n) {
  const double pi0 = b / (a + b), pi1 = a / (a + b);
  return 2.0 * pi0 * pi1 * std::pow(std::abs(1.0 - a - b), static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Heredity.

struct HeredityWeights {
  std::vector<double> alpha;  // alpha_1, alpha_2, ...
  double eta = std::numeric_limits<double>::infinity();
  double p = 1.0;
  double q = 1.0;

  /// sum_{i >= j+1} alpha_i.
  double tail(std::size_t j) const {
    double s = 0.0;
    for (std::size_t i = j + 1; i <= alpha.size(); ++i) s += alpha[i - 1];
    return s;
  }
};

struct HeredityCurve {
  double kappa = 0.0;        // declared decay exponent of tau_V
  double exponent = 0.0;     // kappa'
  std::vector<double> bound; // bound[i-1] for i = 1..n_max
  std::vector<double> truncation, lipschitz_part, weight_tail;
  double at(std::size_t i) const { return bound.at(i - 1); }
};

/// Three-term assembly with unit constants:
///   T^{p-1} j tau_V(i-j) + sum_{k>j} alpha_k + T^{-q},
/// j = max(1, floor(i/2)), T = (j tau_V(i-j))^{-1/(p+q+1)}.
inline HeredityCurve heredity_bound(const HeredityWeights& w, const DependenceBoundCurve& tau_curve, double kappa) {
  if (tau_curve.kind != CurveKind::Tau) throw DomainError("heredity_bound: needs a tau curve");
  for (double a : w.alpha)
    if (!(a >= 0.0) || !std::isfinite(a)) throw DomainError("heredity_bound: weights must be finite and >= 0");
  HeredityCurve h;
  h.kappa = kappa;
  h.exponent = heredity_exponent(w.eta, kappa, w.p, w.q);
  const std::size_t n = tau_curve.bound.size();
  h.bound.resize(n);
  h.truncation.resize(n);
  h.lipschitz_part.resize(n);
  h.weight_tail.resize(n);
  for (std::size_t i = 1; i <= n; ++i) {
    const std::size_t j = std::max<std::size_t>(1, i / 2);
    const std::size_t lag = i > j ? i - j : 1;
    const double x = static_cast<double>(j) * tau_curve.at(lag);
    double lip = 0.0, trunc = 0.0;
    if (x > 0.0) {
      const double T = std::pow(x, -1.0 / (w.p + w.q + 1.0));
      lip = std::pow(T, w.p - 1.0) * x;
      trunc = std::pow(T, -w.q);
    }
    h.lipschitz_part[i - 1] = lip;
    h.truncation[i - 1] = trunc;
    h.weight_tail[i - 1] = w.tail(j);
    h.bound[i - 1] = lip + trunc + h.weight_tail[i - 1];
  }
  return h;
}

}  // namespace catchain
