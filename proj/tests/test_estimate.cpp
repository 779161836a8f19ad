#include <gtest/gtest.h>

#include "catchain/estimate.hpp"
#include "test_support.hpp"

using namespace catchain;

namespace {

Dataset small_data() {
  Dataset d;
  d.y = {1, 0, 1, 1, 0, 0, 1, 0};
  d.dim = 1;
  d.x = {0.5, -1.0, 0.2, 0.0, 1.5, -0.3, 0.8, -0.7};
  return d;
}

Dataset simulate(const ObservationDrivenBinarySpec& s, std::size_t n, std::uint64_t seed) {
  const auto k = model_to_kernel(s);
  SeededRng rng(seed);
  const auto path = sample_forward(k, CovariateModel::gaussian(s.gamma.size(), 0.0, 1.0), n, 1e-6, rng);
  Dataset d;
  d.y = path.y;
  d.dim = path.dim;
  d.x = path.x;
  return d;
}

}  // namespace

TEST(Loglik, MatchesHandRecursion) {
  ObservationDrivenBinarySpec s;
  s.alpha = {0.4};
  s.beta = {0.5};
  s.gamma = {0.7};
  s.intercept = -0.1;
  const auto d = small_data();
  double mu_prev = 0.0, ll = 0.0;
  for (std::size_t t = 0; t < d.size(); ++t) {
    double mu = -0.1 + 0.7 * d.x[t];
    if (t > 0) mu += 0.5 * mu_prev + 0.4 * d.y[t - 1];
    const double p1 = 1.0 / (1.0 + std::exp(-mu));
    ll += std::log(d.y[t] == 1 ? p1 : 1.0 - p1);
    mu_prev = mu;
  }
  const auto r = conditional_loglik(s, d);
  EXPECT_NEAR(r.value, ll, 1e-12);
  EXPECT_EQ(r.terms, d.size());
  const auto w = conditional_loglik(s, d, {3, false});
  EXPECT_EQ(w.excluded, 3u);
}

TEST(Loglik, GenericPathAgreesForInfiniteOrder) {
  BinaryInfiniteOrderSpec s;
  s.a = {0.6};
  s.gamma = {0.3};
  const auto d = small_data();
  double ll = 0.0;
  for (std::size_t t = 0; t < d.size(); ++t) {
    const double mu = 0.3 * d.x[t] + (t > 0 ? 0.6 * d.y[t - 1] : 0.0);
    const double p1 = 1.0 / (1.0 + std::exp(-mu));
    ll += std::log(d.y[t] == 1 ? p1 : 1.0 - p1);
  }
  EXPECT_NEAR(conditional_loglik(ModelSpec{s}, d).value, ll, 1e-12);
}

TEST(Loglik, AnalyticGradient) {
  const auto d = small_data();
  for (auto link : {LinkFunction::logistic(), LinkFunction::probit()}) {
    ObsDrivenLayout layout;
    layout.p = 1;
    layout.q = 2;
    layout.d = 1;
    layout.fit_intercept = true;
    layout.link = link;
    const std::vector<double> th{-0.2, 0.4, 0.3, 0.2, 0.6};
    const auto r = conditional_loglik(layout.to_spec(th), d, {0, true}, &layout);
    const auto num = oracle::numeric_gradient(
        [&](const std::vector<double>& v) { return conditional_loglik(layout.to_spec(v), d).value; }, th);
    ASSERT_EQ(r.gradient.size(), th.size());
    for (std::size_t i = 0; i < th.size(); ++i) EXPECT_NEAR(r.gradient[i], num[i], 1e-7 * (1 + std::abs(num[i])));
  }
}

TEST(Layout, RoundTrip) {
  ObsDrivenLayout layout;
  layout.p = 2;
  layout.q = 1;
  layout.d = 1;
  layout.fit_intercept = true;
  const std::vector<double> th{0.1, 0.2, 0.3, 0.4, 0.5};
  EXPECT_EQ(layout.from_spec(layout.to_spec(th)), th);
  EXPECT_EQ(layout.names(), (std::vector<std::string>{"intercept", "alpha_1", "alpha_2", "beta_1", "gamma_1"}));
  EXPECT_THROW(layout.to_spec(std::vector<double>{0.1}), DimensionError);
}

TEST(Fit, RejectsTooFewObservations) {
  ObsDrivenLayout layout;
  layout.d = 1;
  EXPECT_THROW(fit_mle(layout, small_data()), InputError);
}

TEST(Fit, RecoversParameters) {
  ObservationDrivenBinarySpec truth;
  truth.alpha = {0.4};
  truth.beta = {0.5};
  truth.gamma = {0.8};
  const auto d = simulate(truth, 4000, 123);
  ObsDrivenLayout layout;
  layout.d = 1;
  const auto fit = fit_mle(layout, d);
  ASSERT_NE(fit.status, FitStatus::Failed);
  const std::vector<double> ref{0.4, 0.5, 0.8};
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(fit.theta[i], ref[i], 0.2) << fit.names[i];
  EXPECT_LT(beta_spectral_radius({fit.theta[1]}), 1.0);
}

TEST(Dataset, CsvRoundTrip) {
  const auto d = small_data();
  const auto back = Dataset::from_csv(parse_csv(d.to_csv()));
  EXPECT_EQ(back.y, d.y);
  EXPECT_EQ(back.x, d.x);
  EXPECT_EQ(back.dim, 1u);
  EXPECT_THROW(Dataset::from_csv(parse_csv("t,y\n1,0.5\n")), InputError);
  Dataset bad = d;
  bad.y[0] = 2;
  EXPECT_THROW(bad.validate(2), InputError);
}

TEST(SpectralRadius, BetaPolynomial) {
  EXPECT_NEAR(beta_spectral_radius({0.5}), 0.5, 1e-15);
  EXPECT_NEAR(beta_spectral_radius({0.5, 0.3}), (0.5 + std::sqrt(1.45)) / 2.0, 1e-12);
  EXPECT_NEAR(beta_spectral_radius({-0.9}), 0.9, 1e-15);
}

TEST(Semiparametric, LinkEstimateIsMonotoneAfterRearrangement) {
  ObservationDrivenBinarySpec truth;
  truth.alpha = {0.4};
  truth.beta = {0.3};
  truth.gamma = {1.0};
  const auto d = simulate(truth, 800, 7);
  SemiparametricLayout layout;
  const double obj = semiparametric_objective(layout, std::vector<double>{0.4, 0.3}, d, 0.0);
  EXPECT_TRUE(std::isfinite(obj));
  EXPECT_LT(obj, 0.0);
  std::vector<double> mu;
  double h = 0.0;
  semiparametric_objective(layout, std::vector<double>{0.4, 0.3}, d, 0.0, &h, &mu);
  const auto L = estimate_link(mu, d.y, h, 51);
  ASSERT_EQ(L.z.size(), 51u);
  for (std::size_t i = 1; i < L.z.size(); ++i) {
    EXPECT_GE(L.F_rearranged[i], L.F_rearranged[i - 1]);
    EXPECT_GT(L.z[i], L.z[i - 1]);
  }
  for (double f : L.F) {
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
  }
}

TEST(Semiparametric, NeedsCovariate) {
  Dataset d = small_data();
  d.dim = 0;
  d.x.clear();
  SemiparametricLayout layout;
  layout.d = 0;
  EXPECT_THROW(semiparametric_fit(layout, d), DomainError);
}
