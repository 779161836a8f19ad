#pragma once

// The concrete model classes: binary infinite-order GLM, observation-driven
// binary, nonlinear binary, multinomial logistic and discrete choice. Each is
// turned into a KernelHandle carrying its certified decay envelopes.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "catchain/core_prob.hpp"
#include "catchain/decay_seq.hpp"
#include "catchain/error.hpp"
#include "catchain/kernels.hpp"
#include "catchain/links.hpp"

namespace catchain {

/// mu_t = intercept + sum_j a_j Y_{t-j} + gamma' X_t, a = (a_1, ..., a_K).
struct BinaryInfiniteOrderSpec {
  std::vector<double> a;
  std::vector<double> gamma;
  LinkFunction link = LinkFunction::logistic();
  double intercept = 0.0;
};

/// mu_t = intercept + sum_j beta_j mu_{t-j} + sum_k alpha_k Y_{t-k} + gamma' X_t.
struct ObservationDrivenBinarySpec {
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> gamma;
  LinkFunction link = LinkFunction::logistic();
  double intercept = 0.0;
};

/// lambda_t = g(lambda_{t-1}) + intercept + alpha Y_{t-1} + gamma' X_t with g
/// a kappa-contraction.
struct NonlinearBinarySpec {
  std::function<double(double)> g;
  double kappa = 0.0;
  double alpha = 0.0;
  std::vector<double> gamma;
  LinkFunction link = LinkFunction::logistic();
  double intercept = 0.0;
  // Parameters of g when it is the map s -> g_beta s - g_alpha F(s).
  double g_beta = 0.0;
  double g_alpha = 0.0;

  /// g(s) = beta s - alpha_g F(s), contraction beta-bound |beta| + |alpha_g| L_F.
  static NonlinearBinarySpec russell(double beta, double alpha_g, double alpha, std::vector<double> gamma,
                                     LinkFunction link = LinkFunction::logistic()) {
    NonlinearBinarySpec s;
    s.g = [beta, alpha_g, link](double v) { return beta * v - alpha_g * link(v); };
    s.kappa = std::abs(beta) + std::abs(alpha_g) * link.lipschitz();
    s.alpha = alpha;
    s.gamma = std::move(gamma);
    s.link = link;
    s.g_beta = beta;
    s.g_alpha = alpha_g;
    return s;
  }
};

/// lambda_t = intercept + sum_j B_j lambda_{t-j} + sum_l A_l Ybar_{t-l} + Gamma X_t
/// on R^{N-1}; category 0 is the reference.
struct MultinomialSpec {
  int categories = 3;
  std::vector<Eigen::MatrixXd> A;
  std::vector<Eigen::MatrixXd> B;
  Eigen::MatrixXd Gamma;  // (N-1) x d
  Eigen::VectorXd intercept;
};

/// Y_t = (1{mu_{i,t} + eps_{i,t} > 0})_i with independent noise components of
/// CDF `noise`. Category code I has bit i set when component i is 1.
struct DiscreteChoiceSpec {
  int components = 2;
  std::vector<Eigen::MatrixXd> A;
  std::vector<Eigen::MatrixXd> B;
  Eigen::MatrixXd Gamma;  // N x d
  Eigen::VectorXd intercept;
  LinkFunction noise = LinkFunction::probit();
};

using ModelSpec = std::variant<BinaryInfiniteOrderSpec, ObservationDrivenBinarySpec, NonlinearBinarySpec,
                               MultinomialSpec, DiscreteChoiceSpec>;

inline std::string model_kind(const ModelSpec& s) {
  switch (s.index()) {
    case 0: return "binary_infinite_order";
    case 1: return "observation_driven";
    case 2: return "nonlinear";
    case 3: return "multinomial";
    case 4: return "discrete_choice";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Common linear representation of the observation-driven classes.

enum class Embedding { Scalar, OneHotRef0, Bits };

struct LinearLatent {
  std::size_t k = 1;    // latent dimension
  std::size_t emb = 1;  // embedded category dimension
  std::size_t d = 0;    // covariate dimension
  int categories = 2;
  Embedding embedding = Embedding::Scalar;
  Eigen::VectorXd omega;
  std::vector<Eigen::MatrixXd> A;  // k x emb
  std::vector<Eigen::MatrixXd> B;  // k x k
  Eigen::MatrixXd Gamma;           // k x d

  double embed(Category y, std::size_t i) const {
    switch (embedding) {
      case Embedding::Scalar: return static_cast<double>(y);
      case Embedding::OneHotRef0: return (y >= 1 && static_cast<std::size_t>(y - 1) == i) ? 1.0 : 0.0;
      case Embedding::Bits: return ((static_cast<unsigned>(y) >> i) & 1u) ? 1.0 : 0.0;
    }
    return 0.0;
  }
};

inline Eigen::MatrixXd scalar_matrix(double v) { return Eigen::MatrixXd::Constant(1, 1, v); }

inline LinearLatent linear_form(const ObservationDrivenBinarySpec& s) {
  LinearLatent L;
  L.k = 1;
  L.emb = 1;
  L.d = s.gamma.size();
  L.categories = 2;
  L.embedding = Embedding::Scalar;
  L.omega = Eigen::VectorXd::Constant(1, s.intercept);
  for (double a : s.alpha) L.A.push_back(scalar_matrix(a));
  for (double b : s.beta) L.B.push_back(scalar_matrix(b));
  L.Gamma = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(L.d));
  for (std::size_t i = 0; i < L.d; ++i) L.Gamma(0, static_cast<Eigen::Index>(i)) = s.gamma[i];
  return L;
}

inline LinearLatent linear_form(const MultinomialSpec& s) {
  if (s.categories < 2) throw DomainError("multinomial: need at least two categories");
  LinearLatent L;
  L.k = static_cast<std::size_t>(s.categories - 1);
  L.emb = L.k;
  L.d = static_cast<std::size_t>(s.Gamma.cols());
  L.categories = s.categories;
  L.embedding = Embedding::OneHotRef0;
  const auto k = static_cast<Eigen::Index>(L.k);
  L.omega = s.intercept.size() == 0 ? Eigen::VectorXd::Zero(k) : s.intercept;
  for (const auto& m : s.A) {
    if (m.rows() != k || m.cols() != k) throw DimensionError("multinomial: A_l must be (N-1)x(N-1)");
    L.A.push_back(m);
  }
  for (const auto& m : s.B) {
    if (m.rows() != k || m.cols() != k) throw DimensionError("multinomial: B_j must be (N-1)x(N-1)");
    L.B.push_back(m);
  }
  if (s.Gamma.rows() != k && !(s.Gamma.size() == 0)) throw DimensionError("multinomial: Gamma must have N-1 rows");
  L.Gamma = s.Gamma.size() == 0 ? Eigen::MatrixXd::Zero(k, 0) : s.Gamma;
  if (L.omega.size() != k) throw DimensionError("multinomial: intercept must have N-1 entries");
  return L;
}

inline LinearLatent linear_form(const DiscreteChoiceSpec& s) {
  if (s.components < 1 || s.components > 16) throw DomainError("discrete choice: components must lie in 1..16");
  LinearLatent L;
  L.k = static_cast<std::size_t>(s.components);
  L.emb = L.k;
  L.d = static_cast<std::size_t>(s.Gamma.cols());
  L.categories = 1 << s.components;
  L.embedding = Embedding::Bits;
  const auto k = static_cast<Eigen::Index>(L.k);
  L.omega = s.intercept.size() == 0 ? Eigen::VectorXd::Zero(k) : s.intercept;
  for (const auto& m : s.A) {
    if (m.rows() != k || m.cols() != k) throw DimensionError("discrete choice: A_k must be N x N");
    L.A.push_back(m);
  }
  for (const auto& m : s.B) {
    if (m.rows() != k || m.cols() != k) throw DimensionError("discrete choice: B_j must be N x N");
    L.B.push_back(m);
  }
  if (s.Gamma.rows() != k && !(s.Gamma.size() == 0)) throw DimensionError("discrete choice: Gamma must have N rows");
  L.Gamma = s.Gamma.size() == 0 ? Eigen::MatrixXd::Zero(k, 0) : s.Gamma;
  if (L.omega.size() != k) throw DimensionError("discrete choice: intercept must have N entries");
  return L;
}

/// Companion matrix of lambda_t = sum_j B_j lambda_{t-j} + ..., size qk.
inline Eigen::MatrixXd companion_matrix(const std::vector<Eigen::MatrixXd>& B, std::size_t k) {
  const std::size_t q = B.size();
  if (q == 0) return Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  const auto n = static_cast<Eigen::Index>(q * k);
  const auto kk = static_cast<Eigen::Index>(k);
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t j = 0; j < q; ++j) C.block(0, static_cast<Eigen::Index>(j) * kk, kk, kk) = B[j];
  if (q > 1) C.block(kk, 0, n - kk, n - kk) = Eigen::MatrixXd::Identity(n - kk, n - kk);
  return C;
}

struct StationarityReport {
  bool pass = false;
  double spectral_radius = 0.0;
  std::size_t companion_size = 0;
  std::string warning;
};

inline constexpr double kStationarityMargin = 1e-8;

inline StationarityReport spectral_report(const Eigen::MatrixXd& C) {
  StationarityReport r;
  r.companion_size = static_cast<std::size_t>(C.rows());
  if (C.size() == 0) {
    r.pass = true;
    return r;
  }
  Eigen::EigenSolver<Eigen::MatrixXd> es(C, true);
  if (es.info() != Eigen::Success) {
    r.warning = "eigen decomposition did not converge";
    r.spectral_radius = std::numeric_limits<double>::infinity();
    return r;
  }
  r.spectral_radius = es.eigenvalues().cwiseAbs().maxCoeff();
  // Defective companions have nearly parallel eigenvectors.
  const Eigen::MatrixXcd V = es.eigenvectors();
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(V);
  const auto sv = svd.singularValues();
  const double cond = sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
  if (cond > 1e10) r.warning = "ill-conditioned eigenvector basis (condition " + std::to_string(cond) + ")";
  r.pass = r.spectral_radius <= 1.0 - kStationarityMargin;
  return r;
}

inline StationarityReport stationarity_check(const ModelSpec& spec) {
  return std::visit(
      [](const auto& s) -> StationarityReport {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BinaryInfiniteOrderSpec>) {
          StationarityReport r;
          r.pass = true;
          return r;
        } else if constexpr (std::is_same_v<T, NonlinearBinarySpec>) {
          StationarityReport r;
          r.spectral_radius = s.kappa;
          r.companion_size = 1;
          r.pass = s.kappa >= 0.0 && s.kappa <= 1.0 - kStationarityMargin;
          return r;
        } else {
          const auto L = linear_form(s);
          return spectral_report(companion_matrix(L.B, L.k));
        }
      },
      spec);
}

inline double inf_norm(const Eigen::MatrixXd& M) {
  if (M.size() == 0) return 0.0;
  return M.cwiseAbs().rowwise().sum().maxCoeff();
}

struct ContractionConstants {
  std::size_t r = 1;
  double kappa = 0.0;
  double L = 1.0;
};

inline ContractionConstants linear_contraction(const LinearLatent& Lf) {
  const auto C = companion_matrix(Lf.B, Lf.k);
  const auto rep = spectral_report(C);
  if (!rep.pass) {
    throw ContractionError("spectral radius " + std::to_string(rep.spectral_radius) +
                           " of the companion matrix is not < 1");
  }
  ContractionConstants cc;
  Eigen::MatrixXd P = C;
  for (std::size_t r = 1; r <= 100000; ++r) {
    const double n = inf_norm(P);
    if (n < 1.0) {
      cc.r = r;
      cc.kappa = n;
      break;
    }
    P = P * C;
    if (r == 100000) throw ContractionError("no r with ||A^r|| < 1 found");
  }
  double la = 0.0;
  for (const auto& a : Lf.A) la += inf_norm(a);
  cc.L = std::max({1.0, inf_norm(C), la, inf_norm(Lf.Gamma)});
  return cc;
}

inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

/// Minimal r with ||A^r||_inf < 1, kappa = ||A^r||_inf, and the Lipschitz
/// constant L >= 1 of the one-step map in (y, x, lambda).
inline ContractionConstants contraction_constants(const ModelSpec& spec) {
  return std::visit(
      [](const auto& s) -> ContractionConstants {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BinaryInfiniteOrderSpec>) {
          double sa = 0.0;
          for (double a : s.a) sa += std::abs(a);
          return {1, 0.0, std::max({1.0, sa, max_abs(s.gamma)})};
        } else if constexpr (std::is_same_v<T, NonlinearBinarySpec>) {
          if (!(s.kappa < 1.0)) throw ContractionError("declared contraction of g is not < 1");
          return {1, s.kappa, std::max({1.0, s.kappa, std::abs(s.alpha), max_abs(s.gamma)})};
        } else {
          return linear_contraction(linear_form(s));
        }
      },
      spec);
}

/// Checks |g(s) - g(s')| <= kappa |s - s'| on random pairs.
inline bool verify_contraction(const NonlinearBinarySpec& s, std::uint64_t seed = 1, int pairs = 10000) {
  SeededRng rng(seed, 77);
  for (int i = 0; i < pairs; ++i) {
    const double a = 40.0 * (rng.uniform() - 0.5);
    const double b = a + 10.0 * (rng.uniform() - 0.5);
    if (a == b) continue;
    if (std::abs(s.g(a) - s.g(b)) > s.kappa * std::abs(a - b) * (1.0 + 1e-12) + 1e-15) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Latent recursion.

struct LatentState {
  std::vector<double> lambda;
};

namespace detail {

/// lambda_t from the history by iterating the recursion over n steps from
/// the zero state. mu_hist holds the n computed states, oldest first.
inline void linear_latent_iterate(const LinearLatent& L, const HistoryView& h, std::size_t n, std::vector<double>& mu,
                                  double* out) {
  const std::size_t k = L.k;
  mu.assign(n * k, 0.0);
  std::vector<double> emb(L.emb);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lag = n - 1 - i;  // state at time t - lag
    double* cur = mu.data() + i * k;
    for (std::size_t r = 0; r < k; ++r) cur[r] = L.omega(static_cast<Eigen::Index>(r));
    for (std::size_t j = 1; j <= L.B.size() && j <= i; ++j) {
      const double* prev = mu.data() + (i - j) * k;
      const auto& Bj = L.B[j - 1];
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t c = 0; c < k; ++c)
          cur[r] += Bj(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * prev[c];
    }
    for (std::size_t l = 1; l <= L.A.size(); ++l) {
      const Category y = h.y_lag(lag + l);
      if (y == 0 && L.embedding != Embedding::Bits) continue;
      for (std::size_t c = 0; c < L.emb; ++c) emb[c] = L.embed(y, c);
      const auto& Al = L.A[l - 1];
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t c = 0; c < L.emb; ++c)
          cur[r] += Al(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * emb[c];
    }
    if (L.d > 0) {
      const double* x = h.x_lag(lag);
      if (x) {
        for (std::size_t r = 0; r < k; ++r)
          for (std::size_t c = 0; c < L.d; ++c)
            cur[r] += L.Gamma(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * x[c];
      }
    }
    for (std::size_t r = 0; r < k; ++r) {
      if (!std::isfinite(cur[r])) throw OverflowError("latent recursion produced a non-finite value");
    }
  }
  for (std::size_t r = 0; r < k; ++r) out[r] = n == 0 ? L.omega(static_cast<Eigen::Index>(r)) : mu[(n - 1) * k + r];
}

inline double gamma_dot(const std::vector<double>& gamma, const HistoryView& h, std::size_t lag) {
  if (gamma.empty()) return 0.0;
  const double* x = h.x_lag(lag);
  if (!x) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < gamma.size(); ++i) s += gamma[i] * x[i];
  return s;
}

inline double nonlinear_iterate(const NonlinearBinarySpec& s, const HistoryView& h, std::size_t n) {
  double lam = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lag = n - 1 - i;
    const double prev = i == 0 ? 0.0 : s.g(lam);
    lam = prev + s.intercept + s.alpha * h.y_lag(lag + 1) + gamma_dot(s.gamma, h, lag);
    if (!std::isfinite(lam)) throw OverflowError("latent recursion produced a non-finite value");
  }
  return lam;
}

inline double infinite_order_index(const BinaryInfiniteOrderSpec& s, const HistoryView& h) {
  double mu = s.intercept + gamma_dot(s.gamma, h, 0);
  for (std::size_t j = 1; j <= s.a.size(); ++j) mu += s.a[j - 1] * h.y_lag(j);
  return mu;
}

}  // namespace detail

inline std::size_t latent_dim(const ModelSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::size_t {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, MultinomialSpec>) return static_cast<std::size_t>(s.categories - 1);
        else if constexpr (std::is_same_v<T, DiscreteChoiceSpec>) return static_cast<std::size_t>(s.components);
        else return 1;
      },
      spec);
}

/// lambda_{n,t}: the recursion iterated from the zero state over n lags of
/// the view (lags past the stored data read as padding).
inline LatentState latent_recursion(const ModelSpec& spec, const HistoryView& h, std::size_t n) {
  LatentState st;
  st.lambda.assign(latent_dim(spec), 0.0);
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BinaryInfiniteOrderSpec>) {
          st.lambda[0] = detail::infinite_order_index(s, h);
        } else if constexpr (std::is_same_v<T, NonlinearBinarySpec>) {
          st.lambda[0] = detail::nonlinear_iterate(s, h, n);
        } else {
          std::vector<double> mu;
          detail::linear_latent_iterate(linear_form(s), h, n, mu, st.lambda.data());
        }
      },
      spec);
  return st;
}

/// Most-recent-first convenience overload; past_x[0] is x_t.
inline LatentState latent_recursion(const ModelSpec& spec, std::span<const Category> past_y,
                                    const std::vector<std::vector<double>>& past_x, std::size_t n) {
  std::vector<double> flat;
  std::size_t d = past_x.empty() ? 0 : past_x[0].size();
  for (const auto& r : past_x) flat.insert(flat.end(), r.begin(), r.end());
  return latent_recursion(spec, HistoryView{past_y, flat, d, true}, n);
}

/// |lambda_n - lambda'_n|_inf for n = 0..n_max when the linear recursion is
/// run over the same inputs from two initial stacked states s0 and s1
/// (each of size q*k, most recent first).
inline std::vector<double> latent_gap_profile(const LinearLatent& L, const std::vector<Category>& y_oldest_first,
                                              const std::vector<double>& x_oldest_first,
                                              const std::vector<double>& s0, const std::vector<double>& s1,
                                              std::size_t n_max) {
  const std::size_t k = L.k, q = std::max<std::size_t>(L.B.size(), 1);
  if (s0.size() != q * k || s1.size() != q * k) throw DimensionError("latent_gap_profile: initial states must have q*k entries");
  auto gap = [&](const std::vector<double>& u, const std::vector<double>& v) {
    double g = 0.0;
    for (std::size_t r = 0; r < k; ++r) g = std::max(g, std::abs(u[r] - v[r]));
    return g;
  };
  auto stack_gap = [&](const std::vector<double>& u, const std::vector<double>& v) {
    double g = 0.0;
    for (std::size_t r = 0; r < u.size(); ++r) g = std::max(g, std::abs(u[r] - v[r]));
    return g;
  };
  std::vector<double> out{stack_gap(s0, s1)};
  auto step = [&](const std::vector<double>& st, std::size_t t) {
    std::vector<double> nx(q * k, 0.0);
    for (std::size_t r = 0; r < k; ++r) {
      double v = L.omega(static_cast<Eigen::Index>(r));
      for (std::size_t j = 1; j <= L.B.size(); ++j)
        for (std::size_t c = 0; c < k; ++c)
          v += L.B[j - 1](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * st[(j - 1) * k + c];
      for (std::size_t l = 1; l <= L.A.size(); ++l) {
        const Category y = t >= l && t - l < y_oldest_first.size() ? y_oldest_first[t - l] : 0;
        for (std::size_t c = 0; c < L.emb; ++c)
          v += L.A[l - 1](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * L.embed(y, c);
      }
      for (std::size_t c = 0; c < L.d; ++c) {
        const std::size_t idx = t * L.d + c;
        if (idx < x_oldest_first.size())
          v += L.Gamma(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * x_oldest_first[idx];
      }
      nx[r] = v;
    }
    for (std::size_t i = k; i < q * k; ++i) nx[i] = st[i - k];
    return nx;
  };
  std::vector<double> u = s0, v = s1;
  for (std::size_t n = 1; n <= n_max; ++n) {
    u = step(u, n);
    v = step(v, n);
    out.push_back(gap(u, v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Certification of b_0 for the multivariate links.

/// Softmax with reference category 0: out[0] = 1/(1 + sum e^z), out[i] = e^{z_i}/(...).
inline void softmax_ref0(const double* z, std::size_t k, double* out) {
  double mx = 0.0;
  for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, z[i]);
  double s = std::exp(-mx);
  for (std::size_t i = 0; i < k; ++i) s += std::exp(z[i] - mx);
  out[0] = std::exp(-mx) / s;
  for (std::size_t i = 0; i < k; ++i) out[i + 1] = std::exp(z[i] - mx) / s;
}

/// Multinomial logistic: with |y_i| <= c every probability ratio is at least
/// e^{-2c}, so the overlap is at least e^{-2c} and the TV at most 1 - e^{-2c}.
/// A grid over z in [-8, 8]^{N-1} with y at the corners of the box gives the
/// observed sup for comparison.
inline B0Certificate certify_b0_multinomial(int categories, double c, double grid_half_width = 8.0,
                                            double grid_step = 0.25, double tolerance = 1e-9) {
  if (categories < 2) throw DomainError("certify_b0_multinomial: need N >= 2");
  if (!(c >= 0.0) || !std::isfinite(c)) throw DomainError("certify_b0_multinomial: c must be finite and >= 0");
  const std::size_t k = static_cast<std::size_t>(categories - 1);
  B0Certificate cert;
  cert.value = 1.0 - std::exp(-2.0 * c);
  if (k <= 3) {
    const auto steps = static_cast<std::size_t>(std::round(2 * grid_half_width / grid_step)) + 1;
    std::size_t zcount = 1, ycount = 1;
    for (std::size_t i = 0; i < k; ++i) {
      zcount *= steps;
      ycount *= 3;
    }
    std::vector<double> z(k), zy(k), p(k + 1), q(k + 1);
    for (std::size_t zi = 0; zi < zcount; ++zi) {
      std::size_t code = zi;
      for (std::size_t i = 0; i < k; ++i) {
        z[i] = -grid_half_width + static_cast<double>(code % steps) * grid_step;
        code /= steps;
      }
      softmax_ref0(z.data(), k, p.data());
      for (std::size_t yi = 0; yi < ycount; ++yi) {
        std::size_t yc = yi;
        for (std::size_t i = 0; i < k; ++i) {
          zy[i] = z[i] + (static_cast<double>(yc % 3) - 1.0) * c;
          yc /= 3;
        }
        softmax_ref0(zy.data(), k, q.data());
        cert.grid_sup = std::max(cert.grid_sup, tv_distance(p, q));
      }
    }
  }
  cert.passed = cert.value < 1.0 - tolerance;
  if (!cert.passed) throw CertificationError("b0 certification failed for multinomial link (c too large)");
  return cert;
}

/// Cell probabilities of the sign pattern of lambda + eps with independent
/// noise components: P(I) = prod_{i in I} (1 - G(-lambda_i)) prod_{i not in I} G(-lambda_i).
inline void discrete_choice_cells(const LinkFunction& G, const double* lambda, std::size_t n, double* out) {
  const std::size_t cells = std::size_t{1} << n;
  for (std::size_t I = 0; I < cells; ++I) {
    double p = 1.0;
    for (std::size_t i = 0; i < n; ++i) p *= ((I >> i) & 1u) ? G.upper(-lambda[i]) : G(-lambda[i]);
    out[I] = p;
  }
}

/// Independent components: the overlap of product laws is at least the
/// product of the coordinate overlaps, so TV <= 1 - prod_i (1 - s_i) with s_i
/// the binary certificate at shift c_i.
inline B0Certificate certify_b0_discrete_choice(const LinkFunction& G, const std::vector<double>& c,
                                                double grid_half_width = 6.0, double grid_step = 0.25,
                                                double tolerance = 1e-9) {
  B0Certificate cert;
  double overlap = 1.0;
  for (double ci : c) overlap *= 1.0 - certify_b0_binary(G, ci).value;
  cert.value = 1.0 - overlap;
  const std::size_t n = c.size();
  if (n <= 3) {
    const auto steps = static_cast<std::size_t>(std::round(2 * grid_half_width / grid_step)) + 1;
    std::size_t zcount = 1, ycount = 1;
    for (std::size_t i = 0; i < n; ++i) {
      zcount *= steps;
      ycount *= 3;
    }
    const std::size_t cells = std::size_t{1} << n;
    std::vector<double> z(n), zy(n), p(cells), q(cells);
    for (std::size_t zi = 0; zi < zcount; ++zi) {
      std::size_t code = zi;
      for (std::size_t i = 0; i < n; ++i) {
        z[i] = -grid_half_width + static_cast<double>(code % steps) * grid_step;
        code /= steps;
      }
      discrete_choice_cells(G, z.data(), n, p.data());
      for (std::size_t yi = 0; yi < ycount; ++yi) {
        std::size_t yc = yi;
        for (std::size_t i = 0; i < n; ++i) {
          zy[i] = z[i] + (static_cast<double>(yc % 3) - 1.0) * c[i];
          yc /= 3;
        }
        discrete_choice_cells(G, zy.data(), n, q.data());
        cert.grid_sup = std::max(cert.grid_sup, tv_distance(p, q));
      }
    }
  }
  cert.passed = cert.value < 1.0 - tolerance;
  if (!cert.passed) throw CertificationError("b0 certification failed for discrete-choice noise");
  return cert;
}

inline ProbVector discrete_choice_cellprob(const DiscreteChoiceSpec& spec, const LatentState& lambda) {
  const auto n = static_cast<std::size_t>(spec.components);
  if (lambda.lambda.size() != n) throw DimensionError("discrete_choice_cellprob: latent dimension mismatch");
  std::vector<double> out(std::size_t{1} << n);
  discrete_choice_cells(spec.noise, lambda.lambda.data(), n, out.data());
  return ProbVector(std::move(out), 1e-10);
}

// ---------------------------------------------------------------------------
// Spec -> kernel.

struct KernelOptions {
  std::size_t truncation_lag = 60;  // category and covariate lags kept
  std::size_t horizon = 200;        // stored length of b and e envelopes
  B0Grid grid;
};

namespace detail {

/// Impulse responses Psi_n of lambda_t = sum_j B_j lambda_{t-j} + u_t.
inline std::vector<Eigen::MatrixXd> psi_weights(const LinearLatent& L, std::size_t n) {
  const auto k = static_cast<Eigen::Index>(L.k);
  std::vector<Eigen::MatrixXd> psi(n + 1, Eigen::MatrixXd::Zero(k, k));
  psi[0] = Eigen::MatrixXd::Identity(k, k);
  for (std::size_t m = 1; m <= n; ++m)
    for (std::size_t j = 1; j <= std::min(m, L.B.size()); ++j) psi[m] += L.B[j - 1] * psi[m - j];
  return psi;
}

/// Per-coordinate category sensitivity: out[j][i] = sum_c |H_j(i, c)| where
/// H_j = sum_l Psi_{j-l} A_l is the response of lambda_t to Ybar_{t-j}.
inline std::vector<std::vector<double>> category_row_sums(const LinearLatent& L,
                                                          const std::vector<Eigen::MatrixXd>& psi, std::size_t n) {
  std::vector<std::vector<double>> rows(n + 1, std::vector<double>(L.k, 0.0));
  for (std::size_t j = 1; j <= n; ++j) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(L.k), static_cast<Eigen::Index>(L.emb));
    for (std::size_t l = 1; l <= std::min(j, L.A.size()); ++l) H += psi[j - l] * L.A[l - 1];
    for (std::size_t i = 0; i < L.k; ++i) rows[j][i] = H.row(static_cast<Eigen::Index>(i)).cwiseAbs().sum();
  }
  return rows;
}

struct LinearEnvelope {
  std::vector<double> shift;      // per-coordinate total category shift c_i
  std::vector<std::vector<double>> tail;  // tail[m][i] = sum_{j>m} rowsum_i(H_j), m = 0..horizon
  std::vector<double> x_gain;     // x_gain[s] = max |(Psi_s Gamma)(i, c)|
  double rate = 0.0;              // kappa^{1/r}
};

inline LinearEnvelope linear_envelope(const LinearLatent& L, std::size_t horizon) {
  const auto cc = linear_contraction(L);
  const double rate = std::pow(cc.kappa, 1.0 / static_cast<double>(cc.r));
  // Sum far enough that the geometric remainder is negligible.
  std::size_t n = horizon + 1;
  if (rate > 0.0) {
    const double extra = std::log(1e-18) / std::log(rate);
    n = std::max(n, std::min<std::size_t>(horizon + 1 + static_cast<std::size_t>(std::max(0.0, extra)), 20000));
  }
  const auto psi = psi_weights(L, n + L.A.size());
  const auto rows = category_row_sums(L, psi, n);
  LinearEnvelope env;
  env.rate = rate;
  env.tail.assign(horizon + 1, std::vector<double>(L.k, 0.0));
  std::vector<double> acc(L.k, 0.0);
  // Remainder past n: rows decay like rate^j up to a constant; bound it by
  // the last computed row scaled by rate/(1-rate) with a safety factor.
  if (rate > 0.0 && rate < 1.0) {
    for (std::size_t i = 0; i < L.k; ++i) acc[i] = 2.0 * rows[n][i] * rate / (1.0 - rate);
  }
  for (std::size_t j = n; j >= 1; --j) {
    for (std::size_t i = 0; i < L.k; ++i) acc[i] += rows[j][i];
    if (j - 1 <= horizon) env.tail[j - 1] = acc;  // sum over j' > j-1
  }
  env.shift = env.tail[0];
  env.x_gain.assign(horizon + 1, 0.0);
  if (L.d > 0) {
    for (std::size_t s = 0; s <= horizon; ++s) env.x_gain[s] = (psi[s] * L.Gamma).cwiseAbs().maxCoeff();
  }
  return env;
}

inline DecaySeq envelope_seq(std::vector<double> v, double rate) {
  for (std::size_t m = 1; m < v.size(); ++m) v[m] = std::min(v[m], v[m - 1]);
  if (v.empty() || v.back() == 0.0 || !(rate > 0.0 && rate < 1.0)) return DecaySeq(std::move(v));
  return DecaySeq(std::move(v), TailModel::geometric(rate));
}

inline void fail_certification(const std::string& model, const std::string& what) {
  throw CertificationError(model + ": " + what);
}

}  // namespace detail

/// Builds the kernel of a spec together with its certified envelopes.
/// Evaluation runs the latent recursion over truncation_lag lags.
inline KernelHandle model_to_kernel(const ModelSpec& spec, const KernelOptions& opt = {}) {
  const auto rep = stationarity_check(spec);
  const std::string kind = model_kind(spec);
  if (!rep.pass) {
    detail::fail_certification(kind, "stationarity check failed (spectral radius " +
                                          std::to_string(rep.spectral_radius) + " is not < 1)");
  }
  const std::size_t H = opt.horizon;
  const std::size_t lag = opt.truncation_lag;
  KernelHandle k;
  k.name = kind;
  k.latent_dim = latent_dim(spec);
  auto shared = std::make_shared<ModelSpec>(spec);

  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BinaryInfiniteOrderSpec>) {
          k.categories = 2;
          k.cov_dim = s.gamma.size();
          k.truncation = {s.a.size(), 0};
          k.exact_memory = true;
          double c = 0.0;
          for (double a : s.a) c += std::abs(a);
          B0Certificate cert;
          try {
            cert = certify_b0_binary(s.link, c, opt.grid);
          } catch (const CertificationError& e) {
            detail::fail_certification(kind, std::string("b0 < 1 not certified: ") + e.what());
          }
          std::vector<double> b(H + 1, 0.0);
          for (std::size_t m = 0; m <= H; ++m) {
            double t = 0.0;
            for (std::size_t j = m + 1; j <= s.a.size(); ++j) t += std::abs(s.a[j - 1]);
            b[m] = std::min(cert.value, s.link.lipschitz() * t);
          }
          b[0] = cert.value;
          k.meta.b = detail::envelope_seq(std::move(b), 0.0);
          std::vector<double> e(H + 1, 0.0);
          e[0] = s.link.lipschitz() * max_abs(s.gamma);
          k.meta.e = DecaySeq(std::move(e));
          k.meta.b0_certificate = cert.value;
          k.meta.category_shift = c;
          k.eval = [shared](const HistoryView& h, std::span<double> out) {
            const auto& sp = std::get<BinaryInfiniteOrderSpec>(*shared);
            const double mu = detail::infinite_order_index(sp, h);
            out[1] = sp.link(mu);
            out[0] = sp.link.upper(mu);
          };
          k.latent = [shared](const HistoryView& h, std::span<double> out) {
            out[0] = detail::infinite_order_index(std::get<BinaryInfiniteOrderSpec>(*shared), h);
          };
        } else if constexpr (std::is_same_v<T, NonlinearBinarySpec>) {
          if (!verify_contraction(s)) detail::fail_certification(kind, "g is not a contraction with the declared kappa");
          k.categories = 2;
          k.cov_dim = s.gamma.size();
          k.truncation = {lag, lag};
          const double c = std::abs(s.alpha) / (1.0 - s.kappa);
          B0Certificate cert;
          try {
            cert = certify_b0_binary(s.link, c, opt.grid);
          } catch (const CertificationError& e) {
            detail::fail_certification(kind, std::string("b0 < 1 not certified: ") + e.what());
          }
          const double LF = s.link.lipschitz();
          std::vector<double> b(H + 1), e(H + 1);
          for (std::size_t m = 0; m <= H; ++m) {
            b[m] = std::min(cert.value, LF * c * std::pow(s.kappa, static_cast<double>(m)));
            e[m] = LF * max_abs(s.gamma) * std::pow(s.kappa, static_cast<double>(m));
          }
          b[0] = cert.value;
          k.meta.b = detail::envelope_seq(std::move(b), s.kappa);
          k.meta.e = detail::envelope_seq(std::move(e), s.kappa);
          k.meta.b0_certificate = cert.value;
          k.meta.category_shift = c;
          k.eval = [shared, lag](const HistoryView& h, std::span<double> out) {
            const auto& sp = std::get<NonlinearBinarySpec>(*shared);
            const double mu = detail::nonlinear_iterate(sp, h, lag + 1);
            out[1] = sp.link(mu);
            out[0] = sp.link.upper(mu);
          };
          k.latent = [shared, lag](const HistoryView& h, std::span<double> out) {
            out[0] = detail::nonlinear_iterate(std::get<NonlinearBinarySpec>(*shared), h, lag + 1);
          };
        } else {
          const auto L = linear_form(s);
          k.categories = L.categories;
          k.cov_dim = L.d;
          k.truncation = {lag, lag};
          const auto env = detail::linear_envelope(L, H);
          double LF = 0.0;
          B0Certificate cert;
          try {
            if constexpr (std::is_same_v<T, ObservationDrivenBinarySpec>) {
              LF = s.link.lipschitz();
              cert = certify_b0_binary(s.link, env.shift[0], opt.grid);
            } else if constexpr (std::is_same_v<T, MultinomialSpec>) {
              LF = 0.5;
              cert = certify_b0_multinomial(s.categories, *std::max_element(env.shift.begin(), env.shift.end()));
            } else {
              LF = static_cast<double>(L.k) * s.noise.lipschitz();
              cert = certify_b0_discrete_choice(s.noise, env.shift);
            }
          } catch (const CertificationError& e) {
            detail::fail_certification(kind, std::string("b0 < 1 not certified: ") + e.what());
          }
          std::vector<double> b(H + 1), e(H + 1);
          for (std::size_t m = 0; m <= H; ++m) {
            const double sh = *std::max_element(env.tail[m].begin(), env.tail[m].end());
            b[m] = std::min(cert.value, LF * sh);
            e[m] = LF * env.x_gain[m];
          }
          b[0] = cert.value;
          k.meta.b = detail::envelope_seq(std::move(b), env.rate);
          k.meta.e = detail::envelope_seq(std::move(e), env.rate);
          k.meta.b0_certificate = cert.value;
          k.meta.category_shift = *std::max_element(env.shift.begin(), env.shift.end());
          auto Lshared = std::make_shared<LinearLatent>(L);
          const std::size_t n = lag + 1;
          k.latent = [Lshared, n](const HistoryView& h, std::span<double> out) {
            thread_local std::vector<double> mu;
            detail::linear_latent_iterate(*Lshared, h, n, mu, out.data());
          };
          if constexpr (std::is_same_v<T, ObservationDrivenBinarySpec>) {
            k.eval = [Lshared, shared, n](const HistoryView& h, std::span<double> out) {
              thread_local std::vector<double> mu;
              double lam = 0.0;
              detail::linear_latent_iterate(*Lshared, h, n, mu, &lam);
              const auto& link = std::get<ObservationDrivenBinarySpec>(*shared).link;
              out[1] = link(lam);
              out[0] = link.upper(lam);
            };
          } else if constexpr (std::is_same_v<T, MultinomialSpec>) {
            k.eval = [Lshared, n](const HistoryView& h, std::span<double> out) {
              thread_local std::vector<double> mu, lam;
              lam.resize(Lshared->k);
              detail::linear_latent_iterate(*Lshared, h, n, mu, lam.data());
              softmax_ref0(lam.data(), Lshared->k, out.data());
            };
          } else {
            k.eval = [Lshared, shared, n](const HistoryView& h, std::span<double> out) {
              thread_local std::vector<double> mu, lam;
              lam.resize(Lshared->k);
              detail::linear_latent_iterate(*Lshared, h, n, mu, lam.data());
              discrete_choice_cells(std::get<DiscreteChoiceSpec>(*shared).noise, lam.data(), Lshared->k, out.data());
            };
          }
        }
      },
      spec);
  if (!(k.meta.b0_certificate < 1.0)) detail::fail_certification(kind, "b0 certificate is not < 1");
  return k;
}

}  // namespace catchain
