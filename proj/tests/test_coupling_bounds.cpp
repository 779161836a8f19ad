#include <gtest/gtest.h>

#include <random>

#include "catchain/coupling_bounds.hpp"
#include "test_support.hpp"

using namespace catchain;

TEST(Bstar, MatchesDenseChainOracle) {
  std::mt19937_64 g(11);
  std::uniform_real_distribution<double> u(0.05, 0.9);
  for (int i = 0; i < 30; ++i) {
    const auto b = oracle::random_b(g, 1 + i, u(g));
    const auto fwd = bstar_from_b(DecaySeq(b), 80);
    const auto ref = oracle::bstar_matrix(b, 80);
    for (std::size_t n = 0; n <= 80; ++n) EXPECT_NEAR(fwd.at(n), ref[n], 1e-13) << "n=" << n;
  }
}

TEST(Bstar, RenewalAgreesWithForward) {
  std::mt19937_64 g(12);
  for (int i = 0; i < 20; ++i) {
    const DecaySeq b(oracle::random_b(g, 40, 0.7));
    const auto f = bstar_from_b(b, 150), r = bstar_renewal_oracle(b, 150);
    for (std::size_t n = 0; n <= 150; ++n) EXPECT_NEAR(f.at(n), r.at(n), 1e-12);
  }
}

TEST(Bstar, MarkovIsGeometric) {
  const auto bs = bstar_from_b(DecaySeq({0.3}), 30);
  EXPECT_DOUBLE_EQ(bs.at(0), 0.3);
  for (std::size_t n = 1; n <= 30; ++n) EXPECT_NEAR(bs.at(n), std::pow(0.3, double(n)), 1e-16);
}

TEST(Bstar, ZeroSequence) {
  const auto bs = bstar_from_b(DecaySeq::zeros(5), 20);
  for (std::size_t n = 0; n <= 20; ++n) EXPECT_EQ(bs.at(n), 0.0);
}

TEST(Bstar, RejectsNonContraction) {
  EXPECT_THROW(bstar_from_b(DecaySeq({1.0, 0.5}), 10), ContractionError);
  EXPECT_THROW(bstar_from_b(DecaySeq({0.2, 0.5}), 10), DomainError);
  EXPECT_THROW(bstar_renewal_oracle(DecaySeq({1.5}), 10), ContractionError);
}

TEST(Bstar, StaysInUnitInterval) {
  std::mt19937_64 g(13);
  for (int i = 0; i < 20; ++i) {
    const auto bs = bstar_from_b(DecaySeq(oracle::random_b(g, 30, 0.95)), 100);
    for (double v : bs.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(RenewalMass, BracketsTheSum) {
  const DecaySeq b({0.4, 0.2, 0.1, 0.05}, TailModel::geometric(0.5));
  const auto mass = bstar_mass_after_zero(b);
  const auto bs = bstar_from_b(b, 2000);
  double s = 0.0;
  for (std::size_t n = 1; n <= 2000; ++n) s += bs.at(n);
  EXPECT_LE(mass.lower, s + 1e-10);
  EXPECT_GE(mass.upper, s - 1e-10);
  // log(1 - x) is squeezed between -x/(1 - x) and -x, x <= b_4 = 0.025 past the stored terms.
  const double tail = 0.025 / 0.5;
  EXPECT_NEAR((1 + mass.upper) / (1 + mass.lower), std::exp(tail * 0.025 / 0.975), 1e-12);
}

TEST(Relaxation, IndexShift) {
  const auto bs = bstar_from_b(DecaySeq({0.3}), 10);
  EXPECT_DOUBLE_EQ(relaxation_bound(bs, 1), 0.3);
  EXPECT_NEAR(relaxation_bound(bs, 4), 0.027, 1e-15);
  EXPECT_THROW(relaxation_bound(bs, 0), DomainError);
}

TEST(Perturbation, ZeroForEqualKernels) {
  const DecaySeq b({0.3, 0.1});
  EXPECT_EQ(perturbation_bound(b, b, 0.0, 100).value, 0.0);
  const auto pb = perturbation_bound(DecaySeq({0.3}), DecaySeq({0.3}), 0.1, 100);
  // (1 + sum_{m>=0} b*_m) delta with b*_0 = 0.3 and b*_n = 0.3^n.
  EXPECT_NEAR(pb.value, (1.0 + 0.3 + 0.3 / 0.7) * 0.1, 1e-12);
  EXPECT_THROW(perturbation_bound(b, b, 1.5, 10), DomainError);
}

TEST(Dyn1, HandComputed) {
  const auto bs = bstar_from_b(DecaySeq({0.5}), 10);
  const auto v = dyn1_bound(bs, {0.1, 0.1, 0.1}, true);
  EXPECT_NEAR(v[0], 0.5 + 0.1, 1e-15);
  EXPECT_NEAR(v[1], 0.5 + 0.1 + 0.5 * 0.1, 1e-15);
  EXPECT_NEAR(v[2], 0.25 + 0.1 + (0.5 + 0.5) * 0.1, 1e-15);
  const auto same = dyn1_bound(bs, {0.0, 0.0}, false);
  EXPECT_EQ(same[0], 0.0);
  EXPECT_EQ(same[1], 0.0);
}

TEST(DependenceCurve, ZeroIngredientsGiveZero) {
  const auto bs = bstar_from_b(DecaySeq::zeros(3), 50);
  const auto c = beta_bound(bs, DecaySeq::zeros(50), DecaySeq::zeros(50), 0.0, 20, 50);
  for (std::size_t n = 1; n <= 20; ++n) EXPECT_EQ(c.at(n), 0.0);
}

TEST(DependenceCurve, BetaWithoutCovariatesIsBstarTail) {
  // With c = e = 0 the terms reduce to g_j = b*_{j-1}.
  const auto bs = bstar_from_b(DecaySeq({0.4}), 200);
  const auto c = beta_bound(bs, DecaySeq::zeros(201), DecaySeq::zeros(201), 0.0, 10, 200);
  for (std::size_t j = 1; j <= 10; ++j) EXPECT_NEAR(c.term(j), bs.at(j - 1), 1e-15);
  for (std::size_t n = 2; n <= 10; ++n) EXPECT_NEAR(c.at(n), std::pow(0.4, double(n - 1)) / 0.6, 1e-9);
}

TEST(DependenceCurve, TauIsSupOfTerms) {
  const auto bs = bstar_from_b(DecaySeq({0.3, 0.1}), 200);
  const auto a = DecaySeq::geometric(0.5, 0.6, 201);
  const auto e = DecaySeq::geometric(0.2, 0.5, 201);
  const auto t = tau_bound(bs, a, e, 0.8, 15, 200);
  for (std::size_t n = 1; n <= 15; ++n) {
    double sup = 0.0;
    for (std::size_t j = n; j <= t.terms.size(); ++j) sup = std::max(sup, t.term(j));
    EXPECT_GE(t.at(n), sup - 1e-15);
    if (n > 1) EXPECT_LE(t.at(n), t.at(n - 1));
  }
}

TEST(DependenceCurve, KappaDefinition) {
  const auto bs = bstar_from_b(DecaySeq({0.3}), 100);
  const auto c = DecaySeq::geometric(0.5, 0.5, 101);
  const auto e = DecaySeq::geometric(0.2, 0.4, 101);
  const double ex = 0.7;
  const auto curve = beta_bound(bs, c, e, ex, 5, 100);
  for (std::size_t j = 1; j <= 5; ++j) {
    double k = 0.0;
    for (std::size_t s = 0; s < j; ++s) k += e.at(s) * c.at(j - s);
    k += 2 * ex * e.sum_from(j);
    EXPECT_NEAR(curve.kappa[j - 1], k, 1e-12) << "j=" << j;
  }
}

TEST(Heredity, FormulaAndDomain) {
  EXPECT_DOUBLE_EQ(heredity_exponent(10.0, 3.0, 1.0, 1.0), 2.0 * 3.0 / 3.0);
  EXPECT_DOUBLE_EQ(heredity_exponent(1.5, 3.0, 1.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(heredity_exponent(std::numeric_limits<double>::infinity(), 2.0, 2.0, 2.0), 4.0 / 5.0);
  EXPECT_THROW(heredity_exponent(1.0, 2.0, 1.0, 1.0), DomainError);
  EXPECT_THROW(heredity_exponent(2.0, 0.5, 1.0, 1.0), DomainError);
}

TEST(DecayTransfer, GeometricRate) {
  const auto r = decay_transfer_check(DecaySeq::geometric(0.5, 0.4, 50), 2, 300);
  EXPECT_TRUE(r.stabilized);
  EXPECT_TRUE(r.has_rate);
  EXPECT_LT(r.fitted_rate, 1.0);
}
