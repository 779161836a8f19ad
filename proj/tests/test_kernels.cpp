#include <gtest/gtest.h>

#include <random>

#include "catchain/kernels.hpp"
#include "catchain/links.hpp"
#include "test_support.hpp"

using namespace catchain;

namespace {

// b_m by comparing every pair of table rows whose pasts agree on lags 1..m.
std::vector<double> brute_b(const std::vector<double>& table, std::size_t N, std::size_t M) {
  std::size_t H = 1;
  for (std::size_t i = 0; i < M; ++i) H *= N;
  std::vector<double> b(M + 1, 0.0);
  for (std::size_t m = 0; m <= M; ++m) {
    std::size_t G = 1;
    for (std::size_t i = 0; i < m; ++i) G *= N;
    for (std::size_t a = 0; a < H; ++a)
      for (std::size_t c = 0; c < H; ++c) {
        if (a % G != c % G) continue;
        std::vector<double> p(table.begin() + a * N, table.begin() + (a + 1) * N);
        std::vector<double> q(table.begin() + c * N, table.begin() + (c + 1) * N);
        b[m] = std::max(b[m], oracle::tv(p, q));
      }
  }
  return b;
}

}  // namespace

TEST(TableKernel, EnumeratedBMatchesBruteForce) {
  std::mt19937_64 g(21);
  for (int i = 0; i < 12; ++i) {
    const std::size_t N = 2 + i % 3, M = 1 + i % 3;
    const auto t = oracle::random_table(g, N, M);
    const auto k = make_table_kernel("t", int(N), M, t);
    const auto b = enumerate_b(k);
    const auto ref = brute_b(t, N, M);
    ASSERT_EQ(b.size(), M + 1);
    for (std::size_t m = 0; m <= M; ++m) EXPECT_NEAR(b.at(m), ref[m], 1e-15) << "m=" << m;
    EXPECT_TRUE(b.is_nonincreasing());
  }
}

TEST(TableKernel, HistoryOrder) {
  // memory 2, binary: row code = y_{t-1} + 2 y_{t-2}.
  const std::vector<double> t{0.9, 0.1, 0.8, 0.2, 0.7, 0.3, 0.6, 0.4};
  const auto k = make_table_kernel("t", 2, 2, t);
  const std::vector<Category> recent_first{1, 0};  // y_{t-1} = 1, y_{t-2} = 0 -> row 1
  EXPECT_DOUBLE_EQ(kernel_probs(k, recent_first, {})[1], 0.2);
  const std::vector<Category> other{0, 1};  // row 2
  EXPECT_DOUBLE_EQ(kernel_probs(k, other, {})[1], 0.3);
  EXPECT_DOUBLE_EQ(kernel_eval(k, 0, other, {}), 0.7);
}

TEST(TableKernel, Validation) {
  EXPECT_THROW(make_table_kernel("t", 2, 1, {0.5, 0.5, 0.5}), DimensionError);
  EXPECT_THROW(make_table_kernel("t", 2, 1, {0.5, 0.6, 0.5, 0.5}), DomainError);
  EXPECT_THROW(make_markov_kernel("m", {{1.0, 0.0}}), DimensionError);
}

TEST(MarkovKernel, B0IsDobrushin) {
  const auto k = make_markov_kernel("m", {{0.6, 0.3, 0.1}, {0.2, 0.5, 0.3}, {0.25, 0.25, 0.5}});
  const auto b = enumerate_b(k);
  EXPECT_NEAR(b.at(0), 0.4, 1e-15);  // rows 0 and 2: |0.35| + |0.05| + |0.4| over 2
  EXPECT_EQ(b.at(1), 0.0);
}

TEST(FunctionKernel, CovariateSensitivity) {
  // p1 = F(0.5 y_{t-1} + 0.8 x_t), covariates in {-1, 1}.
  const auto F = LinkFunction::logistic();
  auto fn = [F](const HistoryView& h, std::span<double> out) {
    const double p = F(0.5 * h.y_lag(1) + 0.8 * h.x_lag(0, 0));
    out[0] = 1 - p;
    out[1] = p;
  };
  const auto k = make_function_kernel("f", 2, 1, 1, 0, fn, {{-1.0}, {1.0}});
  ASSERT_TRUE(enumerable(k));
  const auto e = enumerate_e(k);
  // sup over y and x of |F(z + 0.8) - F(z - 0.8)| / 2 at z in {0, 0.5}.
  double ref = 0.0;
  for (double z : {0.0, 0.5}) ref = std::max(ref, (F(z + 0.8) - F(z - 0.8)) / 2.0);
  EXPECT_NEAR(e.at(0), ref, 1e-14);
  EXPECT_EQ(e.at(1), 0.0);
  const auto b = enumerate_b(k);
  double bref = 0.0;
  for (double x : {-0.8, 0.8}) bref = std::max(bref, F(0.5 + x) - F(x));
  EXPECT_NEAR(b.at(0), bref, 1e-14);
}

TEST(SupKernelTv, TableKernels) {
  const auto a = make_markov_kernel("a", {{0.7, 0.3}, {0.4, 0.6}});
  const auto b = make_markov_kernel("b", {{0.6, 0.4}, {0.4, 0.6}});
  EXPECT_NEAR(sup_kernel_tv(a, b), 0.1, 1e-15);
  EXPECT_EQ(sup_kernel_tv(a, a), 0.0);
}

TEST(Links, LogisticB0ClosedForm) {
  for (double c : {0.1, 0.5, 1.0, 2.0, 4.0}) {
    const auto cert = certify_b0_binary(LinkFunction::logistic(), c);
    EXPECT_GE(cert.value, oracle::logistic_b0(c) - 1e-12);
    EXPECT_LE(cert.value, oracle::logistic_b0(c) + 1e-3);
    EXPECT_LE(cert.grid_sup, cert.value);
    EXPECT_TRUE(cert.passed);
  }
}

TEST(Links, ProbitB0ClosedForm) {
  for (double c : {0.3, 1.0, 2.5}) {
    const double ref = std::erf(c / (2 * std::sqrt(2.0)));  // 2 Phi(c/2) - 1
    const auto cert = certify_b0_binary(LinkFunction::probit(), c);
    EXPECT_GE(cert.value, ref - 1e-12);
    EXPECT_LE(cert.value, ref + 1e-3);
  }
}

TEST(Links, ZeroShiftAndDomain) {
  EXPECT_EQ(certify_b0_binary(LinkFunction::logistic(), 0.0).value, 0.0);
  EXPECT_THROW(certify_b0_binary(LinkFunction::logistic(), -1.0), DomainError);
  EXPECT_THROW(LinkFunction::from_name("cauchy"), ConfigError);
}

TEST(Links, LipschitzConstants) {
  EXPECT_DOUBLE_EQ(LinkFunction::logistic().lipschitz(), 0.25);
  EXPECT_NEAR(LinkFunction::probit().lipschitz(), 0.3989422804014327, 1e-15);
  const auto F = LinkFunction::logistic();
  EXPECT_NEAR(F(0.3) + F.upper(0.3), 1.0, 1e-15);
  EXPECT_NEAR(F.density(0.0), 0.25, 1e-15);
}

TEST(CertifiedSequences, DeclaredEnvelopeWins) {
  auto k = make_markov_kernel("m", {{0.7, 0.3}, {0.4, 0.6}});
  const auto b = b_seq_certified(k, 10);
  EXPECT_NEAR(b.at(0), 0.3, 1e-15);
  EXPECT_EQ(b.at(5), 0.0);
  EXPECT_EQ(e_seq_certified(k, 10).at(0), 0.0);
}
