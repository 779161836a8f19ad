#pragma once

// Conditional maximum likelihood for the observation-driven binary model and
// the kernel-smoothed profile estimator of (theta, F).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <gsl/gsl_vector.h>

#include "catchain/csv.hpp"
#include "catchain/error.hpp"
#include "catchain/kernels.hpp"
#include "catchain/links.hpp"
#include "catchain/model_zoo.hpp"

namespace catchain {

struct Dataset {
  std::vector<Category> y;
  std::size_t dim = 0;
  std::vector<double> x;  // n rows of width dim

  std::size_t size() const { return y.size(); }
  double x_at(std::size_t t, std::size_t i) const { return x[t * dim + i]; }

  void validate(int categories = 2) const {
    if (dim > 0 && x.size() != y.size() * dim) throw DimensionError("dataset: x must have one row per observation");
    if (dim == 0 && !x.empty()) throw DimensionError("dataset: x given without a dimension");
    for (Category c : y)
      if (c < 0 || c >= categories) throw InputError("dataset: category out of range");
    for (double v : x)
      if (!std::isfinite(v)) throw InputError("dataset: non-finite covariate");
  }

  std::string to_csv() const {
    std::vector<std::string> header{"t", "y"};
    for (std::size_t i = 1; i <= dim; ++i) header.push_back("x_" + std::to_string(i));
    CsvWriter w(header);
    std::vector<double> row;
    for (std::size_t t = 0; t < y.size(); ++t) {
      row.assign({static_cast<double>(t + 1), static_cast<double>(y[t])});
      for (std::size_t i = 0; i < dim; ++i) row.push_back(x_at(t, i));
      w.row(row);
    }
    return w.str();
  }

  static Dataset from_csv(const CsvTable& t) {
    Dataset d;
    const std::size_t cy = t.column("y");
    std::vector<std::size_t> cx;
    for (std::size_t i = 1;; ++i) {
      const std::string name = "x_" + std::to_string(i);
      if (std::find(t.header.begin(), t.header.end(), name) == t.header.end()) break;
      cx.push_back(t.column(name));
    }
    d.dim = cx.size();
    for (const auto& r : t.rows) {
      const double yv = r[cy];
      if (yv != std::floor(yv)) throw InputError("dataset: y must be an integer category");
      d.y.push_back(static_cast<Category>(yv));
      for (std::size_t c : cx) d.x.push_back(r[c]);
    }
    return d;
  }
};

// ---------------------------------------------------------------------------
// Parameter layout for the observation-driven binary model.

/// theta = (intercept if free, alpha_1..alpha_p, beta_1..beta_q, gamma_1..gamma_d).
struct ObsDrivenLayout {
  std::size_t p = 1, q = 1, d = 0;
  bool fit_intercept = false;
  double intercept = 0.0;  // used when not fitted
  LinkFunction link = LinkFunction::logistic();

  std::size_t size() const { return (fit_intercept ? 1 : 0) + p + q + d; }

  ObservationDrivenBinarySpec to_spec(std::span<const double> th) const {
    if (th.size() != size()) throw DimensionError("parameter vector has the wrong length");
    ObservationDrivenBinarySpec s;
    std::size_t i = 0;
    s.intercept = fit_intercept ? th[i++] : intercept;
    s.alpha.assign(th.begin() + static_cast<std::ptrdiff_t>(i), th.begin() + static_cast<std::ptrdiff_t>(i + p));
    i += p;
    s.beta.assign(th.begin() + static_cast<std::ptrdiff_t>(i), th.begin() + static_cast<std::ptrdiff_t>(i + q));
    i += q;
    s.gamma.assign(th.begin() + static_cast<std::ptrdiff_t>(i), th.begin() + static_cast<std::ptrdiff_t>(i + d));
    s.link = link;
    return s;
  }

  std::vector<double> from_spec(const ObservationDrivenBinarySpec& s) const {
    std::vector<double> th;
    if (fit_intercept) th.push_back(s.intercept);
    th.insert(th.end(), s.alpha.begin(), s.alpha.end());
    th.insert(th.end(), s.beta.begin(), s.beta.end());
    th.insert(th.end(), s.gamma.begin(), s.gamma.end());
    if (th.size() != size()) throw DimensionError("spec does not match the layout");
    return th;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> n;
    if (fit_intercept) n.push_back("intercept");
    for (std::size_t i = 1; i <= p; ++i) n.push_back("alpha_" + std::to_string(i));
    for (std::size_t i = 1; i <= q; ++i) n.push_back("beta_" + std::to_string(i));
    for (std::size_t i = 1; i <= d; ++i) n.push_back("gamma_" + std::to_string(i));
    return n;
  }
};

inline double beta_spectral_radius(const std::vector<double>& beta) {
  std::vector<Eigen::MatrixXd> B;
  for (double b : beta) B.push_back(scalar_matrix(b));
  return spectral_report(companion_matrix(B, 1)).spectral_radius;
}

// ---------------------------------------------------------------------------
// Conditional log-likelihood.

inline constexpr double kLogFloor = -690.7755278982137;  // log(1e-300)

struct LoglikOptions {
  std::size_t warmup = 0;  // leading terms excluded from the sum
  bool gradient = false;
};

struct LoglikResult {
  double value = 0.0;
  std::vector<double> gradient;
  std::size_t terms = 0;
  std::size_t excluded = 0;
  std::size_t underflows = 0;  // terms clamped at log(1e-300)
  std::vector<double> mu;      // latent index per observation
};

/// Warmup window 10 r with r from the contraction constants of the model.
inline std::size_t default_warmup(const ObservationDrivenBinarySpec& s) {
  try {
    return 10 * contraction_constants(ModelSpec{s}).r;
  } catch (const Error&) {
    return 10;
  }
}

/// sum_t log q_theta(y_t | past) with mu started at 0 and Y_t = 0 before the
/// sample. The analytic gradient differentiates the recursion for mu.
inline LoglikResult conditional_loglik(const ObservationDrivenBinarySpec& s, const Dataset& data,
                                       const LoglikOptions& opt = {}, const ObsDrivenLayout* layout = nullptr) {
  data.validate(2);
  if (s.gamma.size() != data.dim) throw DimensionError("loglik: gamma length differs from covariate dimension");
  const std::size_t n = data.size(), p = s.alpha.size(), q = s.beta.size(), d = data.dim;
  const bool grad = opt.gradient && layout;
  const std::size_t P = grad ? layout->size() : 0;
  const std::size_t off_a = grad && layout->fit_intercept ? 1 : 0, off_b = off_a + p, off_g = off_b + q;
  LoglikResult r;
  r.mu.assign(n, 0.0);
  if (grad) r.gradient.assign(P, 0.0);
  std::vector<double> dmu(grad ? n * P : 0, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double m = s.intercept;
    for (std::size_t j = 1; j <= q && j <= t; ++j) m += s.beta[j - 1] * r.mu[t - j];
    for (std::size_t k = 1; k <= p && k <= t; ++k) m += s.alpha[k - 1] * data.y[t - k];
    for (std::size_t i = 0; i < d; ++i) m += s.gamma[i] * data.x_at(t, i);
    if (!std::isfinite(m)) throw OverflowError("loglik: latent recursion overflowed");
    r.mu[t] = m;
    if (grad) {
      double* g = dmu.data() + t * P;
      if (layout->fit_intercept) g[0] = 1.0;
      for (std::size_t k = 1; k <= p && k <= t; ++k) g[off_a + k - 1] = data.y[t - k];
      for (std::size_t j = 1; j <= q && j <= t; ++j) {
        g[off_b + j - 1] += r.mu[t - j];
        const double bj = s.beta[j - 1];
        const double* gp = dmu.data() + (t - j) * P;
        for (std::size_t c = 0; c < P; ++c) g[c] += bj * gp[c];
      }
      for (std::size_t i = 0; i < d; ++i) g[off_g + i] += data.x_at(t, i);
    }
    if (t < opt.warmup) {
      ++r.excluded;
      continue;
    }
    const double F1 = s.link(m), F0 = s.link.upper(m);
    const double pr = data.y[t] == 1 ? F1 : F0;
    double lp = pr > 0.0 ? std::log(pr) : kLogFloor;
    if (lp < kLogFloor) {
      lp = kLogFloor;
      ++r.underflows;
    } else if (pr <= 0.0) {
      ++r.underflows;
    }
    r.value += lp;
    ++r.terms;
    if (grad) {
      double score;
      if (s.link.kind() == LinkKind::Logistic) {
        score = static_cast<double>(data.y[t]) - F1;
      } else {
        const double f = s.link.density(m);
        score = data.y[t] == 1 ? f / std::max(F1, 1e-300) : -f / std::max(F0, 1e-300);
      }
      const double* g = dmu.data() + t * P;
      for (std::size_t c = 0; c < P; ++c) r.gradient[c] += score * g[c];
    }
  }
  return r;
}

/// Generic version through the kernel of any model: sum_t log q(y_t | past).
inline LoglikResult conditional_loglik(const ModelSpec& spec, const Dataset& data, const LoglikOptions& opt = {}) {
  if (const auto* s = std::get_if<ObservationDrivenBinarySpec>(&spec)) return conditional_loglik(*s, data, opt);
  const auto k = model_to_kernel(spec);
  data.validate(k.categories);
  if (k.cov_dim != data.dim) throw DimensionError("loglik: covariate dimension differs from the model's");
  LoglikResult r;
  std::vector<double> p(k.N());
  const std::size_t d = data.dim;
  for (std::size_t t = 0; t < data.size(); ++t) {
    if (t < opt.warmup) {
      ++r.excluded;
      continue;
    }
    HistoryView h{std::span<const Category>(data.y.data(), t), std::span<const double>(data.x.data(), (t + 1) * d), d,
                  false};
    k.probs(h, p);
    const double pr = p[static_cast<std::size_t>(data.y[t])];
    double lp = pr > 0.0 ? std::log(pr) : kLogFloor;
    if (lp <= kLogFloor) {
      lp = kLogFloor;
      ++r.underflows;
    }
    r.value += lp;
    ++r.terms;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Maximum likelihood.

enum class FitStatus { Converged, MaxIter, Failed };

inline std::string to_string(FitStatus s) {
  switch (s) {
    case FitStatus::Converged: return "converged";
    case FitStatus::MaxIter: return "max-iter";
    case FitStatus::Failed: return "failed";
  }
  return "?";
}

struct OptimizerConfig {
  std::size_t max_iter = 4000;
  double size_tol = 1e-7;
  double initial_step = 0.25;
  double start_offset = 0.5;
  double stationarity_margin = 1e-3;
  double barrier_weight = 1e-4;  // per-observation weight of -log(1 - rho - margin)
  std::size_t warmup = kUnbounded;  // kUnbounded: 10 max(1, q)
  bool stderr_estimate = true;
};

struct FitResult {
  std::vector<double> theta;
  std::vector<std::string> names;
  double loglik = -std::numeric_limits<double>::infinity();
  FitStatus status = FitStatus::Failed;
  std::vector<double> stderr_;
  std::size_t iterations = 0;
  std::size_t starts_tried = 0;
  std::size_t starts_failed = 0;
  std::string diagnostics;

  std::string summary() const {
    std::string s = "status: " + to_string(status) + "\nloglik: " + format_double(loglik) + "\n";
    for (std::size_t i = 0; i < theta.size(); ++i) {
      s += names[i] + ": " + format_double(theta[i]);
      if (i < stderr_.size()) s += " (se " + format_double(stderr_[i]) + ")";
      s += "\n";
    }
    if (!diagnostics.empty()) s += "diagnostics: " + diagnostics + "\n";
    return s;
  }

  std::string to_csv() const {
    std::string out = "parameter,estimate,stderr\n";
    for (std::size_t i = 0; i < theta.size(); ++i) {
      out += names[i] + "," + format_double(theta[i]) + "," +
             (i < stderr_.size() ? format_double(stderr_[i]) : std::string("nan")) + "\n";
    }
    return out;
  }
};

namespace detail {

struct SimplexResult {
  std::vector<double> x;
  double f = std::numeric_limits<double>::infinity();
  bool converged = false;
  std::size_t iterations = 0;
};

template <class Obj>
double simplex_trampoline(const gsl_vector* v, void* params) {
  auto* obj = static_cast<Obj*>(params);
  std::vector<double> x(v->size);
  for (std::size_t i = 0; i < v->size; ++i) x[i] = gsl_vector_get(v, i);
  const double f = (*obj)(x);
  return std::isfinite(f) ? f : 1e100;
}

/// Nelder-Mead (GSL nmsimplex2) from x0.
template <class Obj>
SimplexResult nelder_mead(Obj& obj, const std::vector<double>& x0, double step, std::size_t max_iter, double tol) {
  const std::size_t n = x0.size();
  SimplexResult r;
  if (n == 0) {
    r.x = x0;
    r.f = obj(x0);
    r.converged = true;
    return r;
  }
  gsl_multimin_function fn;
  fn.n = n;
  fn.f = &simplex_trampoline<Obj>;
  fn.params = &obj;
  gsl_vector* x = gsl_vector_alloc(n);
  gsl_vector* ss = gsl_vector_alloc(n);
  for (std::size_t i = 0; i < n; ++i) gsl_vector_set(x, i, x0[i]);
  gsl_vector_set_all(ss, step);
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
  gsl_multimin_fminimizer_set(s, &fn, x, ss);
  int status = GSL_CONTINUE;
  std::size_t it = 0;
  while (status == GSL_CONTINUE && it < max_iter) {
    ++it;
    if (gsl_multimin_fminimizer_iterate(s)) break;
    status = gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), tol);
  }
  r.converged = status == GSL_SUCCESS;
  r.iterations = it;
  r.f = s->fval;
  r.x.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.x[i] = gsl_vector_get(s->x, i);
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(x);
  gsl_vector_free(ss);
  return r;
}

/// Start points: zero, all +offset, all -offset and the two alternating sign patterns.
inline std::vector<std::vector<double>> start_points(std::size_t n, double off) {
  std::vector<std::vector<double>> s(5, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    s[1][i] = off;
    s[2][i] = -off;
    s[3][i] = (i % 2 == 0) ? off : -off;
    s[4][i] = (i % 2 == 0) ? -off : off;
  }
  return s;
}

}  // namespace detail

/// Conditional MLE over the stationarity-feasible region. Deterministic.
inline FitResult fit_mle(const ObsDrivenLayout& layout, const Dataset& data, const OptimizerConfig& cfg = {},
                         const std::vector<std::vector<double>>& extra_starts = {}) {
  data.validate(2);
  if (layout.d != data.dim) throw DimensionError("fit: layout covariate dimension differs from the data");
  const std::size_t P = layout.size();
  if (data.size() < 10 * P) {
    throw InputError("fit: need at least " + std::to_string(10 * P) + " observations for " + std::to_string(P) +
                     " parameters, got " + std::to_string(data.size()));
  }
  gsl_set_error_handler_off();
  const std::size_t warmup = cfg.warmup == kUnbounded ? 10 * std::max<std::size_t>(1, layout.q) : cfg.warmup;
  const double nobs = static_cast<double>(data.size());
  auto objective = [&](const std::vector<double>& th) -> double {
    const auto s = layout.to_spec(th);
    const double rho = s.beta.empty() ? 0.0 : beta_spectral_radius(s.beta);
    const double slack = 1.0 - cfg.stationarity_margin - rho;
    if (!(slack > 0.0)) return std::numeric_limits<double>::infinity();
    try {
      const auto r = conditional_loglik(s, data, {warmup, false});
      return -r.value / nobs - cfg.barrier_weight * std::log(slack);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  FitResult best;
  best.names = layout.names();
  auto starts = detail::start_points(P, cfg.start_offset);
  starts.insert(starts.end(), extra_starts.begin(), extra_starts.end());
  double best_f = std::numeric_limits<double>::infinity();
  std::string diag;
  for (const auto& x0 : starts) {
    ++best.starts_tried;
    if (!std::isfinite(objective(x0))) {
      ++best.starts_failed;
      diag += "start infeasible; ";
      continue;
    }
    auto r = detail::nelder_mead(objective, x0, cfg.initial_step, cfg.max_iter, cfg.size_tol);
    // Restart once from the optimum to escape simplex collapse.
    auto r2 = detail::nelder_mead(objective, r.x, cfg.initial_step * 0.2, cfg.max_iter, cfg.size_tol);
    r2.iterations += r.iterations;
    if (!std::isfinite(r2.f) || r2.f >= 1e99) {
      ++best.starts_failed;
      diag += "start diverged; ";
      continue;
    }
    if (r2.f < best_f - 1e-12) {
      best_f = r2.f;
      best.theta = r2.x;
      best.status = r2.converged ? FitStatus::Converged : FitStatus::MaxIter;
      best.iterations = r2.iterations;
    }
  }
  if (best.theta.empty()) {
    best.status = FitStatus::Failed;
    best.diagnostics = "all starts failed: " + diag;
    return best;
  }
  const auto spec = layout.to_spec(best.theta);
  best.loglik = conditional_loglik(spec, data, {warmup, false}).value;
  best.diagnostics = diag;
  if (cfg.stderr_estimate) {
    // Observed information from central differences of the analytic score.
    const double h = 1e-5;
    Eigen::MatrixXd H(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(P));
    bool ok = true;
    for (std::size_t j = 0; j < P && ok; ++j) {
      auto tp = best.theta, tm = best.theta;
      tp[j] += h;
      tm[j] -= h;
      try {
        const auto gp = conditional_loglik(layout.to_spec(tp), data, {warmup, true}, &layout).gradient;
        const auto gm = conditional_loglik(layout.to_spec(tm), data, {warmup, true}, &layout).gradient;
        for (std::size_t i = 0; i < P; ++i)
          H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (gp[i] - gm[i]) / (2 * h);
      } catch (const Error&) {
        ok = false;
      }
    }
    if (ok) {
      const Eigen::MatrixXd info = -0.5 * (H + H.transpose());
      Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
        best.stderr_.resize(P);
        for (std::size_t i = 0; i < P; ++i) {
          const double v = cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
          best.stderr_[i] = v > 0 ? std::sqrt(v) : std::nan("");
        }
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Semiparametric profile estimator.

struct SemiparametricConfig {
  double bandwidth = 0.0;  // 0: std(mu) n^{-1/5}
  std::size_t grid_points = 201;
  OptimizerConfig optimizer;
};

struct LinkEstimate {
  std::vector<double> z;
  std::vector<double> F;              // raw Nadaraya-Watson values
  std::vector<double> F_rearranged;   // monotone rearrangement
  std::size_t fallbacks = 0;          // grid points with an empty kernel window
};

struct SemiparametricResult {
  std::vector<double> theta;  // free parameters (gamma_1 = 1 fixed)
  ObservationDrivenBinarySpec spec;
  double objective = -std::numeric_limits<double>::infinity();
  double bandwidth = 0.0;
  FitStatus status = FitStatus::Failed;
  LinkEstimate link;
  std::vector<double> fitted;  // Fhat(mu_t(theta_hat))
  std::size_t fallbacks = 0;

  std::string fhat_csv() const {
    CsvWriter w({"z", "fhat", "fhat_monotone"});
    for (std::size_t i = 0; i < link.z.size(); ++i) w.row({link.z[i], link.F[i], link.F_rearranged[i]});
    return w.str();
  }
};

namespace detail {

inline double epanechnikov(double u) { return std::abs(u) < 1.0 ? 0.75 * (1.0 - u * u) : 0.0; }

/// Nadaraya-Watson estimate at each query point. Queries with no mu_t inside
/// the window take the y of the nearest mu_t.
inline std::vector<double> nadaraya_watson(const std::vector<double>& mu, const std::vector<Category>& y,
                                           const std::vector<double>& query, double h, std::size_t* fallbacks) {
  std::vector<std::size_t> order(mu.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mu[a] < mu[b]; });
  std::vector<double> ms(mu.size());
  std::vector<double> ys(mu.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    ms[i] = mu[order[i]];
    ys[i] = y[order[i]];
  }
  std::vector<double> out(query.size());
  for (std::size_t k = 0; k < query.size(); ++k) {
    const double z = query[k];
    auto lo = std::upper_bound(ms.begin(), ms.end(), z - h);
    auto hi = std::lower_bound(ms.begin(), ms.end(), z + h);
    double num = 0.0, den = 0.0;
    for (auto it = lo; it < hi; ++it) {
      const auto i = static_cast<std::size_t>(it - ms.begin());
      const double w = epanechnikov((z - ms[i]) / h);
      num += w * ys[i];
      den += w;
    }
    if (den > 0.0) {
      out[k] = num / den;
    } else {
      if (fallbacks) ++*fallbacks;
      auto it = std::lower_bound(ms.begin(), ms.end(), z);
      std::size_t i = it == ms.end() ? ms.size() - 1 : static_cast<std::size_t>(it - ms.begin());
      if (i > 0 && std::abs(ms[i - 1] - z) < std::abs(ms[i] - z)) --i;
      out[k] = ys[i];
    }
  }
  return out;
}

inline double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace detail

/// Layout for the semiparametric index: no intercept, gamma_1 fixed at 1.
/// Free parameters are alpha_1..p, beta_1..q, gamma_2..d.
struct SemiparametricLayout {
  std::size_t p = 1, q = 1, d = 1;

  std::size_t size() const { return p + q + (d > 0 ? d - 1 : 0); }

  ObservationDrivenBinarySpec to_spec(std::span<const double> th) const {
    if (th.size() != size()) throw DimensionError("parameter vector has the wrong length");
    ObservationDrivenBinarySpec s;
    s.alpha.assign(th.begin(), th.begin() + static_cast<std::ptrdiff_t>(p));
    s.beta.assign(th.begin() + static_cast<std::ptrdiff_t>(p), th.begin() + static_cast<std::ptrdiff_t>(p + q));
    if (d > 0) {
      s.gamma.push_back(1.0);
      s.gamma.insert(s.gamma.end(), th.begin() + static_cast<std::ptrdiff_t>(p + q), th.end());
    }
    return s;
  }
};

/// Profile objective sum_t [y log Fhat(mu_t) + (1 - y) log(1 - Fhat(mu_t))]
/// with Fhat the kernel regression of y on mu(theta).
inline double semiparametric_objective(const SemiparametricLayout& layout, std::span<const double> th,
                                       const Dataset& data, double h_fixed, double* h_used = nullptr,
                                       std::vector<double>* mu_out = nullptr, std::vector<double>* fitted = nullptr,
                                       std::size_t* fallbacks = nullptr) {
  const auto s = layout.to_spec(th);
  const auto ll = conditional_loglik(s, data, {0, false});
  const double n = static_cast<double>(data.size());
  const double h = h_fixed > 0.0 ? h_fixed : detail::stddev(ll.mu) * std::pow(n, -0.2);
  if (!(h > 0.0)) throw DomainError("semiparametric: bandwidth must be > 0 (constant index?)");
  if (h_used) *h_used = h;
  const auto F = detail::nadaraya_watson(ll.mu, data.y, ll.mu, h, fallbacks);
  double obj = 0.0;
  for (std::size_t t = 0; t < data.size(); ++t) {
    const double pr = data.y[t] == 1 ? F[t] : 1.0 - F[t];
    obj += pr > 0.0 ? std::max(std::log(pr), kLogFloor) : kLogFloor;
  }
  if (mu_out) *mu_out = ll.mu;
  if (fitted) *fitted = F;
  return obj;
}

/// Fhat on a uniform grid over [min mu, max mu] plus its monotone rearrangement.
inline LinkEstimate estimate_link(const std::vector<double>& mu, const std::vector<Category>& y, double h,
                                  std::size_t points) {
  LinkEstimate L;
  const auto [mn, mx] = std::minmax_element(mu.begin(), mu.end());
  L.z.resize(points);
  for (std::size_t i = 0; i < points; ++i)
    L.z[i] = points == 1 ? *mn : *mn + (*mx - *mn) * static_cast<double>(i) / static_cast<double>(points - 1);
  L.F = detail::nadaraya_watson(mu, y, L.z, h, &L.fallbacks);
  L.F_rearranged = L.F;
  std::sort(L.F_rearranged.begin(), L.F_rearranged.end());
  return L;
}

/// Maximizes the profile objective by Nelder-Mead from 5 starts.
inline SemiparametricResult semiparametric_fit(const SemiparametricLayout& layout, const Dataset& data,
                                               const SemiparametricConfig& cfg = {}) {
  data.validate(2);
  if (layout.d != data.dim) throw DimensionError("semiparametric: layout covariate dimension differs from the data");
  if (layout.d == 0) throw DomainError("semiparametric: the gamma_1 = 1 normalization needs d >= 1");
  if (cfg.bandwidth < 0.0) throw DomainError("semiparametric: bandwidth must be > 0");
  gsl_set_error_handler_off();
  const std::size_t P = layout.size();
  auto objective = [&](const std::vector<double>& th) -> double {
    const auto s = layout.to_spec(th);
    const double rho = s.beta.empty() ? 0.0 : beta_spectral_radius(s.beta);
    const double slack = 1.0 - cfg.optimizer.stationarity_margin - rho;
    if (!(slack > 0.0)) return std::numeric_limits<double>::infinity();
    try {
      return -semiparametric_objective(layout, th, data, cfg.bandwidth) / static_cast<double>(data.size()) -
             cfg.optimizer.barrier_weight * std::log(slack);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  SemiparametricResult res;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& x0 : detail::start_points(P, cfg.optimizer.start_offset)) {
    if (!std::isfinite(objective(x0))) continue;
    auto r = detail::nelder_mead(objective, x0, cfg.optimizer.initial_step, cfg.optimizer.max_iter,
                                 cfg.optimizer.size_tol);
    if (r.f < best - 1e-12 && r.f < 1e99) {
      best = r.f;
      res.theta = r.x;
      res.status = r.converged ? FitStatus::Converged : FitStatus::MaxIter;
    }
  }
  if (res.theta.empty()) return res;
  res.spec = layout.to_spec(res.theta);
  std::vector<double> mu;
  res.objective =
      semiparametric_objective(layout, res.theta, data, cfg.bandwidth, &res.bandwidth, &mu, &res.fitted, &res.fallbacks);
  res.link = estimate_link(mu, data.y, res.bandwidth, cfg.grid_points);
  return res;
}

}  // namespace catchain
