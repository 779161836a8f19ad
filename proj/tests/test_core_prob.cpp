#include <gtest/gtest.h>

#include <random>

#include "catchain/core_prob.hpp"
#include "catchain/csv.hpp"
#include "catchain/decay_seq.hpp"
#include "test_support.hpp"

using namespace catchain;

TEST(ProbVector, RejectsInvalidWeights) {
  EXPECT_THROW(ProbVector(std::vector<double>{}), DimensionError);
  EXPECT_THROW(ProbVector({0.5, 0.6}), DomainError);
  EXPECT_THROW(ProbVector({1.2, -0.2}), DomainError);
  EXPECT_THROW(ProbVector({std::nan(""), 1.0}), DomainError);
  EXPECT_NO_THROW(ProbVector({0.3, 0.7}));
}

TEST(ProbVector, Normalized) {
  auto p = ProbVector::normalized({1.0, 3.0});
  EXPECT_DOUBLE_EQ(p[0], 0.25);
  EXPECT_THROW(ProbVector::normalized({0.0, 0.0}), DomainError);
}

TEST(TvDistance, KnownValues) {
  EXPECT_DOUBLE_EQ(tv_distance(ProbVector({0.2, 0.8}), ProbVector({0.5, 0.5})), 0.3);
  EXPECT_DOUBLE_EQ(tv_distance(ProbVector::point_mass(3, 0), ProbVector::point_mass(3, 2)), 1.0);
  EXPECT_THROW(tv_distance(ProbVector::uniform(2), ProbVector::uniform(3)), DimensionError);
}

TEST(TvDistance, MetricProperties) {
  std::mt19937_64 g(1);
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 2 + i % 5;
    ProbVector p(oracle::random_prob(g, n, 0.0)), q(oracle::random_prob(g, n, 0.0)), r(oracle::random_prob(g, n, 0.0));
    const double pq = tv_distance(p, q);
    EXPECT_GE(pq, 0.0);
    EXPECT_LE(pq, 1.0);
    EXPECT_DOUBLE_EQ(pq, tv_distance(q, p));
    EXPECT_LE(pq, tv_distance(p, r) + tv_distance(r, q) + 1e-15);
  }
}

TEST(MaximalCoupling, MarginalsAndMismatch) {
  std::mt19937_64 g(2);
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + i % 4;
    ProbVector p(oracle::random_prob(g, n, 0.0)), q(oracle::random_prob(g, n, 0.0));
    const auto c = maximal_coupling(p, q);
    const auto m1 = c.first_marginal(), m2 = c.second_marginal();
    double off = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      EXPECT_NEAR(m1[a], p[a], 1e-12);
      EXPECT_NEAR(m2[a], q[a], 1e-12);
      for (std::size_t b = 0; b < n; ++b)
        if (a != b) off += c(a, b);
    }
    EXPECT_NEAR(off, oracle::tv(p.vec(), q.vec()), 1e-12);
  }
}

TEST(MaximalCoupling, EqualLawsNeverMismatch) {
  ProbVector p({0.1, 0.6, 0.3});
  const auto c = maximal_coupling(p, p);
  EXPECT_EQ(c.offdiag_mass(), 0.0);
  SeededRng rng(3);
  for (int i = 0; i < 1000; ++i) {
    auto [u, v] = sample_coupled(c, rng);
    EXPECT_EQ(u, v);
  }
}

TEST(MaximalCoupling, SampledMismatchMatchesTv) {
  ProbVector p({0.5, 0.3, 0.2}), q({0.2, 0.3, 0.5});
  const auto c = maximal_coupling(p, q);
  SeededRng rng(4);
  const int n = 200000;
  int mis = 0;
  for (int i = 0; i < n; ++i) {
    auto [u, v] = sample_coupled(c, rng);
    mis += u != v;
  }
  const double rate = double(mis) / n, se = std::sqrt(0.3 * 0.7 / n);
  EXPECT_NEAR(rate, 0.3, 4 * se);
}

TEST(SampleCoupledSecond, ConditionalLawGivesQ) {
  const std::vector<double> p{0.5, 0.3, 0.2}, q{0.1, 0.4, 0.5};
  SeededRng rng(5);
  const int n = 200000;
  std::vector<double> counts(3, 0.0);
  int mis = 0;
  for (int i = 0; i < n; ++i) {
    const Category u = rng.categorical(p);
    const Category v = sample_coupled_second(p, q, u, rng);
    counts[static_cast<std::size_t>(v)] += 1.0;
    mis += u != v;
  }
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(counts[c] / n, q[c], 4 * std::sqrt(q[c] * (1 - q[c]) / n));
  EXPECT_NEAR(double(mis) / n, oracle::tv(p, q), 4 * std::sqrt(0.4 * 0.6 / n));
}

TEST(SeededRng, DeterministicAndSplit) {
  SeededRng a(42), b(42), c(43);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(SeededRng(42).next_u64(), c.next_u64());
  const SeededRng root(7);
  SeededRng s1 = root.split(1), s1b = root.split(1), s2 = root.split(2);
  EXPECT_EQ(s1.next_u64(), s1b.next_u64());
  EXPECT_NE(root.split(1).next_u64(), s2.next_u64());
}

TEST(SeededRng, UniformMoments) {
  SeededRng rng(8);
  double s = 0, s2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
  }
  EXPECT_NEAR(s / n, 0.5, 0.005);
  EXPECT_NEAR(s2 / n - 0.25, 1.0 / 12.0, 0.003);
}

TEST(Csv, ShortestRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0}) EXPECT_EQ(parse_double(format_double(v)), v);
  EXPECT_EQ(format_double(0.1), "0.1");
  CsvWriter w({"a", "b"});
  w.row({1.0, 0.25});
  const auto t = parse_csv(w.str());
  EXPECT_EQ(t.header, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(t.rows[0][1], 0.25);
  EXPECT_THROW(parse_csv("a,b\n1\n"), InputError);
  EXPECT_THROW(t.column("c"), InputError);
}

TEST(DecaySeq, TailSums) {
  const auto g = DecaySeq::geometric(1.0, 0.5, 10);
  EXPECT_NEAR(g.total(), 2.0, 1e-12);
  EXPECT_NEAR(g.at(20), std::pow(0.5, 20), 1e-15);
  EXPECT_TRUE(g.summable());
  const auto csv = g.to_csv();
  const auto back = DecaySeq::from_csv_text(csv);
  EXPECT_EQ(back.values(), g.values());
}

TEST(DecaySeq, FitClassifiesShapes) {
  std::vector<double> geo, poly;
  for (int m = 0; m < 60; ++m) {
    geo.push_back(std::pow(0.7, m));
    poly.push_back(std::pow(m + 1.0, -2.0));
  }
  EXPECT_EQ(fit_decay(geo).kind, TailKind::Geometric);
  EXPECT_NEAR(fit_decay(geo).rate(), 0.7, 1e-12);
  EXPECT_EQ(fit_decay(poly).kind, TailKind::Polynomial);
  EXPECT_NEAR(fit_decay(poly).exponent(), 2.0, 1e-9);
}

TEST(DecaySeq, PolynomialTailUsesZeta) {
  const DecaySeq s({}, TailModel::polynomial(1.0, 2.0));
  EXPECT_NEAR(s.total(), M_PI * M_PI / 6.0, 1e-12);
  EXPECT_THROW(DecaySeq({}, TailModel::polynomial(1.0, 1.0)).total(), DivergenceError);
  EXPECT_THROW(DecaySeq({-0.1}), DomainError);
}
