#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "catchain/config.hpp"
#include "catchain/coupling_bounds.hpp"
#include "catchain/csv.hpp"
#include "catchain/dependence.hpp"
#include "catchain/estimate.hpp"
#include "catchain/simulate.hpp"

namespace catchain {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2 };

namespace detail {

inline std::filesystem::path out_path(const RunConfig& c, const std::string& file) {
  return std::filesystem::path(c.output) / file;
}

inline std::string kv(const std::string& key, const std::string& value) { return key + ": " + value + "\n"; }
inline std::string kv(const std::string& key, double value) { return kv(key, format_double(value)); }

inline DecaySeq config_b(const RunConfig& c, std::size_t horizon) {
  if (c.model.has_kernel()) return b_seq_certified(c.model.kernel(horizon), horizon);
  const TailModel tail = c.model.tail_rate > 0.0 ? TailModel::geometric(c.model.tail_rate) : TailModel::finite();
  return DecaySeq(c.model.b, tail);
}

inline DecaySeq config_e(const RunConfig& c, std::size_t horizon) {
  if (c.model.has_kernel()) return e_seq_certified(c.model.kernel(horizon), horizon);
  if (c.model.e.empty()) return DecaySeq::zeros(horizon + 1);
  const TailModel tail = c.model.tail_rate > 0.0 ? TailModel::geometric(c.model.tail_rate) : TailModel::finite();
  return DecaySeq(c.model.e, tail);
}

/// Initial pasts used by the verification suites: all zeros against all N-1.
inline std::size_t init_length(const KernelHandle& k, const RunConfig& c) {
  const std::size_t m = k.truncation.max_lag_y;
  return m == kUnbounded ? c.model.truncation_lag : m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simulate

/// Writes path.csv, latent.csv for latent-process models, and the
/// certificate sidecar simulate_certificate.txt.
inline int cmd_simulate(const RunConfig& c, std::ostream& log) {
  const std::size_t horizon = 400;
  const auto k = c.model.kernel(horizon);
  const auto bstar = kernel_bstar(k, horizon);
  SeededRng rng(c.seed);
  const auto path = sample_forward(k, c.covariates, c.simulate.length, c.simulate.eps, rng, &bstar);

  std::string side;
  side += detail::kv("model", c.model.kind);
  side += detail::kv("seed", std::to_string(c.seed));
  side += detail::kv("length", std::to_string(path.length()));
  side += detail::kv("b0", bstar.at(0));
  side += detail::kv("eps", c.simulate.eps);
  side += detail::kv("burnin", std::to_string(path.burnin_used));
  side += detail::kv("stationarity_gap_bound", path.stationarity_gap_bound);
  side += detail::kv("eps_achieved", path.stationarity_gap_bound <= c.simulate.eps ? "yes" : "no");

  write_file_atomic(detail::out_path(c, "path.csv"), path.to_csv());
  if (!path.lambda.empty()) write_file_atomic(detail::out_path(c, "latent.csv"), path.latent_csv());
  write_file_atomic(detail::out_path(c, "simulate_certificate.txt"), side);
  log << "simulated " << path.length() << " steps after burn-in " << path.burnin_used << " (gap bound "
      << format_double(path.stationarity_gap_bound) << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bounds

/// Writes b.csv, bstar.csv, e.csv, coupling.csv, terms.csv, curve.csv and
/// bounds_summary.txt.
inline int cmd_bounds(const RunConfig& c, std::ostream& log) {
  CertificateOptions opt;
  opt.metric = c.bounds.metric;
  opt.p = c.bounds.p;
  opt.n_max = c.bounds.n_max;
  opt.horizon = c.bounds.horizon;

  DependenceCertificate cert;
  std::vector<double> empirical;
  if (c.model.has_kernel()) {
    const auto k = c.model.kernel(opt.horizon);
    cert = certificate_for_kernel(k, c.covariates, opt);
    const bool finite_cov = c.covariates.dim == 0 || !c.covariates.support().empty();
    if (opt.metric == CouplingMetric::Discrete && finite_cov) {
      try {
        empirical = empirical_beta_small(k, c.covariates, std::min<std::size_t>(opt.n_max, 10), 2);
      } catch (const UnsupportedError&) {
        empirical.clear();
      }
    }
  } else {
    const auto b = detail::config_b(c, opt.horizon);
    const auto e = detail::config_e(c, opt.horizon);
    DecaySeq a;
    try {
      a = covariate_coupling_coeffs(c.covariates, opt.metric, opt.horizon);
    } catch (const DivergenceError& err) {
      throw DivergenceError(std::string("covariate coupling a_t: ") + err.what());
    }
    const double norm = opt.metric == CouplingMetric::Discrete ? covariate_lp_norm(c.covariates, opt.p) : 0.0;
    cert = certificate_from_ingredients(c.model.kind, b, a, e, covariate_mean_abs(c.covariates), norm, opt);
  }

  const auto& cv = cert.curve;
  CsvWriter terms({"j", cv.kind == CurveKind::Beta ? "g" : "h", "kappa"});
  for (std::size_t j = 1; j <= cv.terms.size(); ++j) terms.row({static_cast<double>(j), cv.term(j), cv.kappa[j - 1]});

  write_file_atomic(detail::out_path(c, "b.csv"), cert.b.to_csv());
  write_file_atomic(detail::out_path(c, "bstar.csv"), cert.bstar.to_csv());
  write_file_atomic(detail::out_path(c, "e.csv"), cert.e.to_csv());
  write_file_atomic(detail::out_path(c, "coupling.csv"), cert.coupling.to_csv());
  write_file_atomic(detail::out_path(c, "terms.csv"), terms.str());
  write_file_atomic(detail::out_path(c, "curve.csv"), cert.to_csv(empirical));
  write_file_atomic(detail::out_path(c, "bounds_summary.txt"), cert.summary());
  log << cert.summary();
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify

struct CheckRow {
  std::string suite;
  std::size_t t = 0;  // time or lag index; 0 when not applicable
  double value = 0.0;
  double bound = 0.0;
  bool pass = false;
  std::string note;
};

struct VerifyReport {
  std::vector<CheckRow> rows;

  bool all_pass() const {
    return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const CheckRow& r) { return r.pass; });
  }

  std::string to_csv() const {
    std::string s = "suite,t,value,bound,pass,note\n";
    for (const auto& r : rows) {
      s += r.suite + "," + std::to_string(r.t) + "," + format_double(r.value) + "," + format_double(r.bound) + "," +
           (r.pass ? "1" : "0") + "," + r.note + "\n";
    }
    return s;
  }

  /// One line per suite with the number of checks and failures.
  std::string table() const {
    std::vector<std::string> suites;
    for (const auto& r : rows)
      if (std::find(suites.begin(), suites.end(), r.suite) == suites.end()) suites.push_back(r.suite);
    std::ostringstream os;
    os << std::left << std::setw(14) << "suite" << std::setw(8) << "checks" << std::setw(8) << "failed"
       << "result\n";
    for (const auto& s : suites) {
      std::size_t n = 0, bad = 0;
      std::string note;
      for (const auto& r : rows) {
        if (r.suite != s) continue;
        ++n;
        if (!r.pass) {
          ++bad;
          if (note.empty()) note = r.note;
        }
      }
      os << std::left << std::setw(14) << s << std::setw(8) << n << std::setw(8) << bad << (bad ? "FAIL" : "PASS");
      if (!note.empty()) os << "  " << note;
      os << "\n";
    }
    return os.str();
  }
};

namespace detail {

inline void verify_renewal(const DecaySeq& b, std::size_t horizon, VerifyReport& rep) {
  const auto fwd = bstar_from_b(b, horizon);
  const auto ren = bstar_renewal_oracle(b, horizon);
  double worst = 0.0;
  for (std::size_t n = 0; n <= horizon; ++n) worst = std::max(worst, std::abs(fwd.at(n) - ren.at(n)));
  rep.rows.push_back({"renewal", 0, worst, 1e-12, worst <= 1e-12, ""});
}

inline void verify_relaxation(const KernelHandle& k, const DecaySeq& bstar, std::span<const double> x,
                              std::size_t M, std::size_t L, VerifyReport& rep) {
  std::vector<Category> zA(M, 0), zB(M, static_cast<Category>(k.N() - 1));
  for (std::size_t t = 1; t <= L; ++t) {
    const double tv = tv_distance(exact_marginal_law(k, x, zA, t), exact_marginal_law(k, x, zB, t));
    const double bound = relaxation_bound(bstar, static_cast<long>(t));
    rep.rows.push_back({"relaxation", t, tv, bound, tv <= bound + 1e-12, ""});
  }
}

inline void verify_glued(const KernelHandle& k, const DecaySeq& bstar, std::span<const double> x, std::size_t M,
                         std::size_t L, std::size_t R, double sigmas, const SeededRng& rng, VerifyReport& rep) {
  std::vector<Category> zA(M, 0), zB(M, static_cast<Category>(k.N() - 1));
  const auto g = glued_mismatch_rates(k, k, x, x, zA, zB, L, R, rng.split(10));
  const auto lawA = single_path_laws(k, x, zA, L, R, rng.split(11));
  const auto lawB = single_path_laws(k, x, zB, L, R, rng.split(12));
  const auto bound = dyn1_bound(bstar, std::vector<double>(L, 0.0), true);
  const double n = static_cast<double>(R);
  for (std::size_t t = 1; t <= L; ++t) {
    const double p = g.mismatch[t - 1];
    const double lim = bound[t - 1] + sigmas * binomial_se(p, n);
    rep.rows.push_back({"glued_dyn1", t, p, lim, p <= lim, ""});
    const double tv1 = tv_distance(g.law1[t - 1], lawA[t - 1]);
    const double b1 = tv_band(g.law1[t - 1], lawA[t - 1], n, n, sigmas);
    rep.rows.push_back({"glued_law1", t, tv1, b1, tv1 <= b1, ""});
    const double tv2 = tv_distance(g.law2[t - 1], lawB[t - 1]);
    const double b2 = tv_band(g.law2[t - 1], lawB[t - 1], n, n, sigmas);
    rep.rows.push_back({"glued_law2", t, tv2, b2, tv2 <= b2, ""});
  }
}

inline void verify_beta(const KernelHandle& k, const CovariateModel& cov, std::size_t n_max, std::size_t horizon,
                        VerifyReport& rep) {
  CertificateOptions opt;
  opt.metric = CouplingMetric::Discrete;
  opt.n_max = n_max;
  opt.horizon = horizon;
  const auto cert = certificate_for_kernel(k, cov, opt);
  const auto emp = empirical_beta_small(k, cov, n_max, 2);
  for (std::size_t n = 1; n <= n_max; ++n) {
    const double b = cert.curve.at(n);
    rep.rows.push_back({"beta", n, emp[n - 1], b, emp[n - 1] <= b, ""});
  }
}

}  // namespace detail

/// Runs every suite that applies to the configured model. Certification
/// failures become failed rows rather than exceptions.
inline VerifyReport verify_report(const RunConfig& c) {
  VerifyReport rep;
  const std::size_t horizon = c.bounds.horizon;
  DecaySeq b, bstar;
  std::optional<KernelHandle> k;
  try {
    if (c.model.has_kernel()) k = c.model.kernel(horizon);
    b = detail::config_b(c, horizon);
    bstar = bstar_from_b(b, horizon);
  } catch (const ContractionError& e) {
    rep.rows.push_back({"certification", 0, b.empty() ? std::nan("") : b.at(0), 1.0, false, e.what()});
    return rep;
  } catch (const CertificationError& e) {
    rep.rows.push_back({"certification", 0, std::nan(""), 1.0, false, e.what()});
    return rep;
  } catch (const DomainError& e) {
    rep.rows.push_back({"certification", 0, std::nan(""), 1.0, false, e.what()});
    return rep;
  }
  rep.rows.push_back({"certification", 0, b.at(0), 1.0, b.at(0) < 1.0, ""});
  detail::verify_renewal(b, horizon, rep);
  if (!k) return rep;

  const std::size_t L = c.verify.length;
  SeededRng rng(c.seed);
  SeededRng xr = rng.split(1);
  const auto x = sample_covariates(c.covariates, L, xr);
  const std::size_t M = detail::init_length(*k, c);

  bool finite = k->exact_memory && k->truncation.max_lag_y != kUnbounded;
  if (finite) {
    try {
      detail::verify_relaxation(*k, bstar, x, M, L, rep);
    } catch (const UnsupportedError&) {
      finite = false;
    }
  }
  detail::verify_glued(*k, bstar, x, M, L, c.verify.replicas, c.verify.sigmas, rng, rep);
  const bool finite_cov = c.covariates.dim == 0 || !c.covariates.support().empty();
  if (finite && finite_cov) {
    try {
      detail::verify_beta(*k, c.covariates, c.verify.beta_n, horizon, rep);
    } catch (const UnsupportedError&) {
    }
  }
  return rep;
}

/// Writes verify.csv; exit 0 iff every check passes.
inline int cmd_verify(const RunConfig& c, std::ostream& log) {
  const auto rep = verify_report(c);
  write_file_atomic(detail::out_path(c, "verify.csv"), rep.to_csv());
  log << rep.table();
  return rep.all_pass() ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------
// fit

/// Fits the observation-driven binary model by maximum likelihood, either to
/// fit.data or, when that is empty, to a path simulated from the configured
/// model (self-test). Writes fit.csv and fit_summary.txt, plus fhat.csv and
/// semiparametric.csv with the semiparametric flag.
inline int cmd_fit(const RunConfig& c, std::ostream& log) {
  const auto& f = c.fit;
  Dataset data;
  std::vector<double> theta_star;
  ObsDrivenLayout layout;
  layout.p = f.p;
  layout.q = f.q;
  layout.fit_intercept = f.fit_intercept;
  layout.link = LinkFunction::from_name(f.link);

  if (!f.data.empty()) {
    data = Dataset::from_csv(read_csv(f.data));
  } else {
    const auto* spec = c.model.spec ? std::get_if<ObservationDrivenBinarySpec>(&*c.model.spec) : nullptr;
    if (!spec) throw ConfigError("fit self-test needs an observation_driven model");
    if (spec->alpha.size() != f.p || spec->beta.size() != f.q) {
      throw ConfigError("fit self-test: fit.p and fit.q must match the model's alpha and beta lengths");
    }
    layout.intercept = spec->intercept;
    layout.d = spec->gamma.size();
    theta_star = layout.from_spec(*spec);
    SeededRng rng(c.seed);
    const auto path = sample_forward(c.model.kernel(), c.covariates, f.self_test_length, f.self_test_eps, rng);
    data.y = path.y;
    data.dim = path.dim;
    data.x = path.x;
    write_file_atomic(detail::out_path(c, "self_test_data.csv"), data.to_csv());
  }
  layout.d = data.dim;

  const auto res = fit_mle(layout, data);
  std::string summary = res.summary();
  int code = res.status == FitStatus::Failed ? kExitFailure : kExitOk;
  if (!theta_star.empty() && !res.theta.empty()) {
    double err = 0.0;
    for (std::size_t i = 0; i < theta_star.size(); ++i) err = std::max(err, std::abs(res.theta[i] - theta_star[i]));
    summary += detail::kv("self_test_max_error", err);
    summary += detail::kv("self_test_tolerance", f.tolerance);
    summary += detail::kv("self_test_recovered", err < f.tolerance ? "yes" : "no");
    if (!(err < f.tolerance)) code = kExitFailure;
  }
  write_file_atomic(detail::out_path(c, "fit.csv"), res.to_csv());
  write_file_atomic(detail::out_path(c, "fit_summary.txt"), summary);
  log << summary;

  if (f.semiparametric) {
    SemiparametricLayout sl{f.p, f.q, data.dim};
    SemiparametricConfig sc;
    sc.bandwidth = f.bandwidth;
    const auto sp = semiparametric_fit(sl, data, sc);
    if (sp.status == FitStatus::Failed) {
      log << "semiparametric fit failed: no start point gave a finite objective\n";
      code = kExitFailure;
    } else {
      std::string csv = "parameter,estimate\n";
      std::vector<std::string> names;
      for (std::size_t i = 1; i <= sl.p; ++i) names.push_back("alpha_" + std::to_string(i));
      for (std::size_t i = 1; i <= sl.q; ++i) names.push_back("beta_" + std::to_string(i));
      for (std::size_t i = 2; i <= sl.d; ++i) names.push_back("gamma_" + std::to_string(i));
      for (std::size_t i = 0; i < sp.theta.size(); ++i) csv += names[i] + "," + format_double(sp.theta[i]) + "\n";
      csv += "bandwidth," + format_double(sp.bandwidth) + "\n";
      write_file_atomic(detail::out_path(c, "semiparametric.csv"), csv);
      write_file_atomic(detail::out_path(c, "fhat.csv"), sp.fhat_csv());
      log << "semiparametric: objective " << format_double(sp.objective) << ", bandwidth "
          << format_double(sp.bandwidth) << "\n";
    }
  }
  return code;
}

// ---------------------------------------------------------------------------

/// Runs a command by name and maps errors to exit codes: configuration
/// problems give 2, every other library error gives 1.
inline int run_command(const std::string& name, const RunConfig& c, std::ostream& log, std::ostream& err) {
  try {
    if (name == "simulate") return cmd_simulate(c, log);
    if (name == "bounds") return cmd_bounds(c, log);
    if (name == "verify") return cmd_verify(c, log);
    if (name == "fit") return cmd_fit(c, log);
    err << "error: unknown command '" << name << "'\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ContractionError& e) {
    err << "certification failure (contraction, b0 < 1): " << e.what() << "\n";
  } catch (const CertificationError& e) {
    err << "certification failure: " << e.what() << "\n";
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << "\n";
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
  } catch (const std::filesystem::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
  }
  return kExitFailure;
}

}  // namespace catchain
