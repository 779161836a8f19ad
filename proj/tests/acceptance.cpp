// Acceptance suite: one PASS/FAIL line per criterion, exit 0 iff all pass.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "catchain/catchain.hpp"
#include "test_support.hpp"

using namespace catchain;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void run(int id, const char* name, double budget_s, const std::function<Outcome()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = secs <= budget_s;
  const bool ok = o.pass && in_time;
  if (!ok) ++failures;
  std::printf("[%s] %2d %-28s %7.2fs (budget %.0fs)  %s%s\n", ok ? "PASS" : "FAIL", id, name, secs, budget_s,
              o.detail.c_str(), in_time ? "" : "  over time budget");
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// 1. Forward iteration and renewal equation agree; Markov gives b0^n.
Outcome house_of_cards() {
  std::mt19937_64 g(101);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto b = DecaySeq(oracle::random_b(g, 1 + i % 60, u(g)));
    const auto f = bstar_from_b(b, 200), r = bstar_renewal_oracle(b, 200);
    for (std::size_t n = 0; n <= 200; ++n) worst = std::max(worst, std::abs(f.at(n) - r.at(n)));
  }
  const auto k = make_markov_kernel("m", {{0.65, 0.35}, {0.35, 0.65}});
  const auto bs = kernel_bstar(k, 200);
  const double b0 = enumerate_b(k).at(0);
  double mk = 0.0;
  for (std::size_t n = 1; n <= 200; ++n) mk = std::max(mk, std::abs(bs.at(n) - std::pow(b0, double(n))));
  return {worst <= 1e-12 && mk <= 1e-15, fmt("max |fwd-renewal| = %.2e (tol 1e-12); markov max |b*-b0^n| = %.2e", worst, mk)};
}

// 2. Exact TV between two initializations <= b*_{t-1}.
Outcome relaxation() {
  std::mt19937_64 g(202);
  std::size_t violations = 0, checks = 0;
  double worst_ratio = 0.0;
  for (int i = 0; i < 10; ++i) {
    const std::size_t M = 1 + i % 2;
    const auto table = oracle::random_table(g, 2, M, 0.02);
    const auto k = make_table_kernel("t", 2, M, table);
    const auto bstar = bstar_from_b(enumerate_b(k), 50);
    const std::size_t H = std::size_t{1} << M;
    std::vector<Category> z1(M), z2(M);
    for (std::size_t c1 = 0; c1 < H; ++c1)
      for (std::size_t c2 = c1 + 1; c2 < H; ++c2) {
        detail::decode_history(c1, 2, z1);
        detail::decode_history(c2, 2, z2);
        for (std::size_t t = 1; t <= 12; ++t) {
          const double tv = tv_distance(exact_marginal_law(k, {}, z1, t), exact_marginal_law(k, {}, z2, t));
          const double bound = relaxation_bound(bstar, static_cast<long>(t));
          ++checks;
          if (tv > bound * (1 + 1e-12) + 1e-15) ++violations;  // roundoff only
          if (bound > 1e-12) worst_ratio = std::max(worst_ratio, tv / bound);
        }
      }
  }
  return {violations == 0, fmt("%.0f checks, %.0f violations, max TV/bound = %.3f", double(checks), double(violations),
                               worst_ratio)};
}

// 3. Glued coupling against the mismatch formula and single-path marginals.
Outcome glued() {
  std::mt19937_64 g(303);
  const std::size_t R = 100000, L = 8;
  std::size_t mis_fail = 0, law_fail = 0, checks = 0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t N = 2 + i % 2, M = 1 + (i / 2) % 2;
    const auto ta = oracle::random_table(g, N, M, 0.05);
    const auto tb = oracle::perturb_table(g, ta, N, 0.1);
    const auto kA = make_table_kernel("a", int(N), M, ta), kB = make_table_kernel("b", int(N), M, tb);
    const auto bstar = bstar_from_b(enumerate_b(kA), 50);
    const double delta = sup_kernel_tv(kA, kB);
    std::vector<Category> zA(M, 0), zB(M, static_cast<Category>(N - 1));
    const bool differ = i % 3 != 0;
    if (!differ) zB = zA;
    const auto bound = dyn1_bound(bstar, std::vector<double>(L, delta), differ);
    const SeededRng root(9000 + std::uint64_t(i));
    const auto st = glued_mismatch_rates(kA, kB, {}, {}, zA, zB, L, R, root.split(1));
    const auto lawA = single_path_laws(kA, {}, zA, L, R, root.split(2));
    const auto lawB = single_path_laws(kB, {}, zB, L, R, root.split(3));
    for (std::size_t t = 0; t < L; ++t) {
      ++checks;
      const double p = st.mismatch[t];
      if (p > bound[t] + 4.0 * binomial_se(p, double(R))) ++mis_fail;
      if (tv_distance(st.law1[t], lawA[t]) > tv_band(st.law1[t], lawA[t], double(R), double(R))) ++law_fail;
      if (tv_distance(st.law2[t], lawB[t]) > tv_band(st.law2[t], lawB[t], double(R), double(R))) ++law_fail;
    }
  }
  return {mis_fail == 0 && law_fail == 0,
          fmt("%.0f time points, mismatch > bound+4sd: %.0f, marginal TV outside 4sd band: %.0f", double(checks),
              double(mis_fail), double(law_fail))};
}

// 4. Invariant-law perturbation bound on 3-state Markov chains.
Outcome perturbation() {
  std::mt19937_64 g(404);
  std::size_t violations = 0;
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    std::vector<std::vector<double>> P, Q;
    for (int r = 0; r < 3; ++r) P.push_back(oracle::random_prob(g, 3, 0.1));
    for (int r = 0; r < 3; ++r) {
      auto q = oracle::random_prob(g, 3, 0.1);
      std::vector<double> row(3);
      for (int c = 0; c < 3; ++c) row[c] = 0.9 * P[r][c] + 0.1 * q[c];
      Q.push_back(row);
    }
    const auto kP = make_markov_kernel("p", P), kQ = make_markov_kernel("q", Q);
    const double tv = tv_distance(invariant_distribution(P), invariant_distribution(Q));
    const auto pb = perturbation_bound(enumerate_b(kP), enumerate_b(kQ), sup_kernel_tv(kP, kQ), 200);
    if (tv > pb.value) ++violations;
    worst = std::max(worst, tv / pb.value);
  }
  return {violations == 0, fmt("10 fixtures, %.0f violations, max TV/bound = %.3f", double(violations), worst)};
}

// 5. Contraction certificate of the observation-driven model with beta = 0.5.
Outcome contraction() {
  bool ok = true;
  std::string detail;
  for (double alpha : {0.4, 0.8, -0.6}) {
    ObservationDrivenBinarySpec s{{alpha}, {0.5}, {}};
    const auto cc = contraction_constants(ModelSpec{s});
    const double limit = std::log(std::pow(cc.kappa, 1.0 / double(cc.r))) + 0.05;
    const auto k = oracle::truncated_obs_driven(alpha, 0.5, 10);
    const auto b = enumerate_b(k);
    std::vector<double> m, lb;
    for (std::size_t i = 1; i + 1 < b.size(); ++i) {
      m.push_back(double(i));
      lb.push_back(std::log(b.at(i)));
    }
    const double slope = linear_fit(m, lb).slope;
    const auto L = linear_form(s);
    std::mt19937_64 g(505);
    std::bernoulli_distribution coin(0.5);
    std::vector<Category> y(40);
    for (auto& v : y) v = coin(g);
    const auto gap = latent_gap_profile(L, y, {}, {3.0}, {-2.0}, 40);
    double worst = 0.0;
    for (std::size_t n = 1; n <= 40; ++n) {
      const double ratio = gap[n] / gap[0], lim = std::pow(cc.kappa, double(n) / double(cc.r));
      worst = std::max(worst, ratio / lim);
    }
    const bool pass = slope <= limit && worst <= 1.0 + 1e-9;
    ok = ok && pass;
    detail += fmt("a=%.1f: slope %.3f <= %.3f, ", alpha, slope, limit) + fmt("max gap/kappa^n %.6f; ", worst);
  }
  return {ok, detail};
}

// 6. Exact beta of finite joint chains below the certificate; geometric
// ingredients give a log-linear curve.
Outcome dependence() {
  CertificateOptions opt;
  opt.metric = CouplingMetric::Discrete;
  opt.n_max = 10;
  opt.horizon = 200;
  std::size_t violations = 0, checks = 0;
  // Two-state Markov chains: beta(n) = 2 pi0 pi1 |1-a-b|^n.
  for (auto [a, b] : std::vector<std::pair<double, double>>{{0.2, 0.3}, {0.35, 0.35}, {0.6, 0.1}, {0.7, 0.8}}) {
    const auto k = make_markov_kernel("m", {{1 - a, a}, {b, 1 - b}});
    const auto cert = certificate_for_kernel(k, CovariateModel::none(), opt);
    for (std::size_t n = 1; n <= 10; ++n, ++checks)
      if (two_state_beta(a, b, n) > cert.curve.at(n)) ++violations;
  }
  // Binary kernel driven by a two-state covariate chain.
  const auto cov = CovariateModel::markov({{0.7, 0.3}, {0.4, 0.6}}, {{-1.0}, {1.0}});
  for (double a1 : {0.5, 0.8, -0.7}) {
    BinaryInfiniteOrderSpec s{{a1}, {0.5}};
    const auto k = model_to_kernel(ModelSpec{s});
    const auto cert = certificate_for_kernel(k, cov, opt);
    const auto beta = empirical_beta_small(k, cov, 10, 2);
    for (std::size_t n = 1; n <= 10; ++n, ++checks)
      if (beta[n - 1] > cert.curve.at(n)) ++violations;
  }
  // Geometric ingredients.
  CertificateOptions go;
  go.metric = CouplingMetric::L1;
  go.n_max = 40;
  go.horizon = 400;
  const auto geo = certificate_from_ingredients("geo", DecaySeq::geometric(0.3, 0.5, 401),
                                                DecaySeq::geometric(0.5, 0.6, 401), DecaySeq::geometric(0.2, 0.5, 401),
                                                0.8, 0.0, go);
  std::vector<double> n, lc;
  for (std::size_t i = 1; i <= 40; ++i) {
    n.push_back(double(i));
    lc.push_back(std::log(geo.curve.at(i)));
  }
  const double r2 = linear_fit(n, lc).r2;
  return {violations == 0 && r2 > 0.99,
          fmt("%.0f beta checks, %.0f violations; geometric fixture log-curve R^2 = %.5f", double(checks),
              double(violations), r2)};
}

// 7. Heredity exponent on a grid.
Outcome heredity() {
  std::size_t mismatches = 0, points = 0;
  const double inf = std::numeric_limits<double>::infinity();
  for (double eta : {1.5, 3.0, 6.0, inf})
    for (auto [kappa, p, q] : std::vector<std::tuple<double, double, double>>{
             {2.0, 1.0, 1.0}, {3.5, 2.0, 2.0}, {5.0, 1.0, 3.0}, {1.2, 4.0, 0.5}, {8.0, 3.0, 1.5}}) {
      ++points;
      if (heredity_exponent(eta, kappa, p, q) != oracle::heredity(eta, kappa, p, q)) ++mismatches;
    }
  return {points == 20 && mismatches == 0, fmt("%.0f grid points, %.0f mismatches", double(points), double(mismatches))};
}

// 8. b0 certificates.
Outcome b0() {
  const auto lg = certify_b0_binary(LinkFunction::logistic(), 1.0);
  const bool lg_ok = std::abs(lg.value - 0.2449) <= 1e-3 && lg.value < 1.0;
  const auto mn = certify_b0_multinomial(3, 0.8);
  const auto dc = certify_b0_discrete_choice(LinkFunction::probit(), {0.7, 1.1});
  MultinomialSpec ms{3, {Eigen::MatrixXd::Identity(2, 2) * 0.4}, {Eigen::MatrixXd::Identity(2, 2) * 0.3},
                     Eigen::MatrixXd::Zero(2, 0), Eigen::VectorXd::Zero(2)};
  DiscreteChoiceSpec ds{2, {Eigen::MatrixXd::Identity(2, 2) * 0.5}, {Eigen::MatrixXd::Identity(2, 2) * 0.4},
                        Eigen::MatrixXd::Zero(2, 0), Eigen::VectorXd::Zero(2)};
  const double kmn = model_to_kernel(ModelSpec{ms}).meta.b.at(0);
  const double kdc = model_to_kernel(ModelSpec{ds}).meta.b.at(0);
  const bool ok = lg_ok && mn.value < 1.0 && mn.grid_sup <= mn.value && dc.value < 1.0 && dc.grid_sup <= dc.value &&
                  kmn < 1.0 && kdc < 1.0;
  return {ok, fmt("logistic c=1: %.6f (target 0.2449 +- 1e-3); multinomial N=3: %.4f; ", lg.value, mn.value) +
                  fmt("discrete choice N=2: %.4f; model kernels b0 %.4f / %.4f", dc.value, kmn, kdc)};
}

// 9. Simulate-then-fit recovery and the analytic score.
Outcome estimation() {
  const ObservationDrivenBinarySpec truth{{0.4}, {0.5}, {0.3}};
  const auto k = model_to_kernel(ModelSpec{truth});
  const auto cov = CovariateModel::gaussian(1, 0.0, 1.0);
  ObsDrivenLayout layout;
  layout.d = 1;
  const auto star = layout.from_spec(truth);
  int good = 0;
  Dataset first;
  for (int s = 0; s < 20; ++s) {
    SeededRng rng(1000 + std::uint64_t(s));
    const auto path = sample_forward(k, cov, 5000, 1e-6, rng);
    Dataset d{path.y, path.dim, path.x};
    if (s == 0) first = d;
    const auto fit = fit_mle(layout, d);
    double err = 0.0;
    for (std::size_t i = 0; i < star.size(); ++i) err = std::max(err, std::abs(fit.theta[i] - star[i]));
    if (fit.status != FitStatus::Failed && err < 0.15) ++good;
  }
  double worst = 0.0;
  for (const auto& th : std::vector<std::vector<double>>{{0.4, 0.5, 0.3}, {0.1, 0.2, -0.4}, {0.8, 0.3, 0.6}}) {
    const auto ll = conditional_loglik(layout.to_spec(th), first, {0, true}, &layout);
    const auto num = oracle::numeric_gradient(
        [&](const std::vector<double>& x) { return conditional_loglik(layout.to_spec(x), first, {0, false}).value; }, th,
        1e-5);
    for (std::size_t i = 0; i < th.size(); ++i)
      worst = std::max(worst, std::abs(ll.gradient[i] - num[i]) / std::max(1.0, std::abs(num[i])));
  }
  return {good >= 18 && worst < 1e-4,
          fmt("%.0f/20 runs within 0.15 (need 18); gradient max rel. error %.2e (tol 1e-4)", double(good), worst)};
}

// 10. cmd_simulate is deterministic.
Outcome determinism() {
  auto cfg = load_config(std::string(CATCHAIN_FIXTURES) + "/simulate_minimal.json");
  const auto base = std::filesystem::temp_directory_path() / "catchain_acceptance_det";
  std::filesystem::remove_all(base);
  std::ostringstream sink;
  std::string files[2][2];
  for (int r = 0; r < 2; ++r) {
    cfg.output = (base / ("run" + std::to_string(r))).string();
    if (cmd_simulate(cfg, sink) != 0) return {false, "cmd_simulate failed"};
    files[r][0] = read_file(std::filesystem::path(cfg.output) / "path.csv");
    files[r][1] = read_file(std::filesystem::path(cfg.output) / "simulate_certificate.txt");
  }
  std::filesystem::remove_all(base);
  const bool same = files[0][0] == files[1][0] && files[0][1] == files[1][1] && !files[0][0].empty();
  return {same, same ? fmt("path.csv (%.0f bytes) and sidecar byte-identical", double(files[0][0].size()))
                     : std::string("outputs differ")};
}

}  // namespace

int main() {
  run(1, "house-of-cards agreement", 5, house_of_cards);
  run(2, "relaxation bound", 30, relaxation);
  run(3, "glued coupling + mismatch", 300, glued);
  run(4, "perturbation bound", 10, perturbation);
  run(5, "contraction certificate", 30, contraction);
  run(6, "dependence certificates", 60, dependence);
  run(7, "heredity exponent", 1, heredity);
  run(8, "b0 certification", 30, b0);
  run(9, "estimation recovery", 300, estimation);
  run(10, "determinism", 30, determinism);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
