#pragma once

// Transition kernels q(y | past categories, past covariates): evaluation with
// truncation and padding, plus exact enumeration of the decay coefficients
// b_m and e_s for small finite-memory kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "catchain/core_prob.hpp"
#include "catchain/decay_seq.hpp"
#include "catchain/error.hpp"

namespace catchain {

inline constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();

/// Read-only view of the past at time t.
///
/// Categories are addressed by lag m >= 1 (y_{t-m}) and covariates by lag
/// s >= 0 (x_{t-s}, so lag 0 is the current covariate). The underlying
/// arrays are either most-recent-first or oldest-first; lags beyond the
/// stored data or beyond the truncation limits read as category 0 and the
/// zero covariate.
struct HistoryView {
  std::span<const Category> y;
  std::span<const double> x;  // rows of width dim
  std::size_t dim = 0;
  bool recent_first = true;
  std::size_t max_lag_y = kUnbounded;
  std::size_t max_lag_x = kUnbounded;  // largest usable covariate lag

  std::size_t y_len() const { return std::min(y.size(), max_lag_y); }

  std::size_t x_rows() const { return dim == 0 ? 0 : x.size() / dim; }

  /// Number of usable covariate lags 0..x_len()-1.
  std::size_t x_len() const {
    const std::size_t rows = x_rows();
    return max_lag_x == kUnbounded ? rows : std::min(rows, max_lag_x + 1);
  }

  Category y_lag(std::size_t m) const {
    if (m == 0 || m > y_len()) return 0;
    return recent_first ? y[m - 1] : y[y.size() - m];
  }

  /// Pointer to the dim values of x_{t-s}, or nullptr for the zero padding.
  const double* x_lag(std::size_t s) const {
    if (s >= x_len()) return nullptr;
    const std::size_t rows = x_rows();
    const std::size_t row = recent_first ? s : rows - 1 - s;
    return x.data() + row * dim;
  }

  double x_lag(std::size_t s, std::size_t i) const {
    const double* p = x_lag(s);
    return p ? p[i] : 0.0;
  }
};

struct TruncationPolicy {
  std::size_t max_lag_y = kUnbounded;
  std::size_t max_lag_x = kUnbounded;
};

/// Declared decay data of a kernel.
struct KernelMeta {
  DecaySeq b;
  DecaySeq e;
  double b0_certificate = 0.0;
  double category_shift = 0.0;  // bound c on the category part of the latent index
};

using KernelEvalFn = std::function<void(const HistoryView&, std::span<double>)>;
using LatentFn = std::function<void(const HistoryView&, std::span<double>)>;

/// Evaluatable transition kernel. The evaluator writes N probabilities into
/// its output span and must not allocate.
struct KernelHandle {
  std::string name;
  int categories = 2;
  std::size_t cov_dim = 0;
  TruncationPolicy truncation;
  bool exact_memory = false;  // evaluator reads no category lag past max_lag_y
  KernelEvalFn eval;
  LatentFn latent;  // optional latent index lambda_t
  std::size_t latent_dim = 0;
  KernelMeta meta;
  std::vector<std::vector<double>> covariate_support;  // finite covariate values, if known

  std::size_t N() const { return static_cast<std::size_t>(categories); }

  void probs(HistoryView h, std::span<double> out) const {
    h.max_lag_y = std::min(h.max_lag_y, truncation.max_lag_y);
    h.max_lag_x = std::min(h.max_lag_x, truncation.max_lag_x);
    eval(h, out);
  }

  std::vector<double> probs(const HistoryView& h) const {
    std::vector<double> out(N());
    probs(h, out);
    return out;
  }

  void latent_state(HistoryView h, std::span<double> out) const {
    if (!latent) throw UnsupportedError("kernel has no latent process");
    h.max_lag_y = std::min(h.max_lag_y, truncation.max_lag_y);
    h.max_lag_x = std::min(h.max_lag_x, truncation.max_lag_x);
    latent(h, out);
  }
};

/// Probability of `target` given most-recent-first histories.
/// past_x[0] is the current covariate x_t.
inline ProbVector kernel_probs(const KernelHandle& k, std::span<const Category> past_y,
                               const std::vector<std::vector<double>>& past_x) {
  std::vector<double> flat;
  flat.reserve(past_x.size() * k.cov_dim);
  for (const auto& row : past_x) {
    if (row.size() != k.cov_dim) throw DimensionError("kernel_eval: covariate dimension mismatch");
    for (double v : row) {
      if (!std::isfinite(v)) throw InputError("kernel_eval: non-finite covariate");
      flat.push_back(v);
    }
  }
  for (Category c : past_y) {
    if (c < 0 || c >= k.categories) throw InputError("kernel_eval: category out of range");
  }
  HistoryView h{past_y, flat, k.cov_dim, true};
  auto p = k.probs(h);
  return ProbVector(std::move(p), 1e-10);
}

inline double kernel_eval(const KernelHandle& k, Category target, std::span<const Category> past_y,
                          const std::vector<std::vector<double>>& past_x) {
  if (target < 0 || target >= k.categories) throw InputError("kernel_eval: target out of range");
  return kernel_probs(k, past_y, past_x)[static_cast<std::size_t>(target)];
}

// ---------------------------------------------------------------------------
// Exact enumeration for finite-memory kernels.

namespace detail {

inline std::size_t ipow(std::size_t base, std::size_t e) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < e; ++i) {
    if (r > (std::size_t{1} << 40) / std::max<std::size_t>(base, 1)) return std::size_t{1} << 41;
    r *= base;
  }
  return r;
}

/// Lags of an encoded y-history: digit i (base N, least significant first)
/// is y_{t-1-i}.
inline void decode_history(std::size_t code, std::size_t N, std::span<Category> out) {
  for (auto& c : out) {
    c = static_cast<Category>(code % N);
    code /= N;
  }
}

/// Calls fn(flat_x_rows_recent_first) for every covariate history of
/// length rows drawn from the support.
template <class Fn>
void for_each_covariate_history(const std::vector<std::vector<double>>& support, std::size_t dim, std::size_t rows,
                                Fn&& fn) {
  if (dim == 0 || rows == 0) {
    std::vector<double> none;
    fn(std::span<const double>(none));
    return;
  }
  const std::size_t S = support.size();
  const std::size_t total = ipow(S, rows);
  std::vector<double> flat(rows * dim);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t r = 0; r < rows; ++r) {
      const auto& v = support[c % S];
      c /= S;
      std::copy(v.begin(), v.end(), flat.begin() + static_cast<std::ptrdiff_t>(r * dim));
    }
    fn(std::span<const double>(flat));
  }
}

inline std::size_t covariate_rows(const KernelHandle& k) {
  if (k.cov_dim == 0) return 0;
  if (k.truncation.max_lag_x == kUnbounded) throw UnsupportedError("enumeration needs a finite covariate memory");
  return k.truncation.max_lag_x + 1;
}

inline void check_enumerable(const KernelHandle& k) {
  if (!k.exact_memory || k.truncation.max_lag_y == kUnbounded) {
    throw UnsupportedError("exact enumeration needs a kernel with finite category memory");
  }
  const std::size_t M = k.truncation.max_lag_y;
  if (ipow(k.N(), 2 * M) > (std::size_t{1} << 20)) {
    throw UnsupportedError("exact enumeration: N^(2*memory) exceeds 2^20");
  }
  if (k.cov_dim > 0) {
    if (k.covariate_support.empty()) throw UnsupportedError("exact enumeration needs a finite covariate support");
    if (ipow(k.covariate_support.size(), covariate_rows(k) + 1) > (std::size_t{1} << 16)) {
      throw UnsupportedError("exact enumeration: covariate history space too large");
    }
  }
}

}  // namespace detail

/// Exact b_m = sup over covariates and over pasts agreeing on the m most
/// recent categories of the TV between the kernel outputs. Length memory+1;
/// b_m = 0 from m = memory on.
inline DecaySeq enumerate_b(const KernelHandle& k) {
  detail::check_enumerable(k);
  const std::size_t N = k.N();
  const std::size_t M = k.truncation.max_lag_y;
  const std::size_t H = detail::ipow(N, M);
  std::vector<double> b(M + 1, 0.0);
  std::vector<double> table(H * N);
  std::vector<Category> ys(M);
  detail::for_each_covariate_history(k.covariate_support, k.cov_dim, detail::covariate_rows(k),
                                     [&](std::span<const double> xs) {
    for (std::size_t code = 0; code < H; ++code) {
      detail::decode_history(code, N, ys);
      HistoryView h{ys, xs, k.cov_dim, true};
      k.probs(h, std::span<double>(table.data() + code * N, N));
    }
    for (std::size_t m = 0; m < M; ++m) {
      const std::size_t G = detail::ipow(N, m);  // codes sharing code % G agree on m lags
      double best = 0.0;
      for (std::size_t r = 0; r < G; ++r) {
        if (N == 2) {
          double lo = 1.0, hi = 0.0;
          for (std::size_t code = r; code < H; code += G) {
            lo = std::min(lo, table[code * 2 + 1]);
            hi = std::max(hi, table[code * 2 + 1]);
          }
          best = std::max(best, hi - lo);
        } else {
          for (std::size_t c1 = r; c1 < H; c1 += G) {
            for (std::size_t c2 = c1 + G; c2 < H; c2 += G) {
              best = std::max(best, tv_distance(std::span<const double>(table.data() + c1 * N, N),
                                                std::span<const double>(table.data() + c2 * N, N)));
            }
          }
        }
      }
      b[m] = std::max(b[m], best);
    }
  });
  return DecaySeq(b);
}

/// Exact e_s = sup TV / |x_{t-s} - x'_{t-s}|_1 over histories differing only
/// in covariate lag s. Length max_lag_x + 2 with a trailing zero.
inline DecaySeq enumerate_e(const KernelHandle& k) {
  if (k.cov_dim == 0) return DecaySeq(std::vector<double>{0.0});
  detail::check_enumerable(k);
  const std::size_t N = k.N();
  const std::size_t M = k.truncation.max_lag_y;
  const std::size_t H = detail::ipow(N, M);
  const std::size_t rows = detail::covariate_rows(k);
  const std::size_t d = k.cov_dim;
  const auto& S = k.covariate_support;
  std::vector<double> e(rows + 1, 0.0);
  std::vector<Category> ys(M);
  std::vector<double> p1(N), p2(N);
  detail::for_each_covariate_history(S, d, rows, [&](std::span<const double> xs) {
    std::vector<double> alt(xs.begin(), xs.end());
    for (std::size_t s = 0; s < rows; ++s) {
      for (const auto& v : S) {
        double dist = 0.0;
        for (std::size_t i = 0; i < d; ++i) dist += std::abs(v[i] - xs[s * d + i]);
        if (dist == 0.0) continue;
        std::copy(v.begin(), v.end(), alt.begin() + static_cast<std::ptrdiff_t>(s * d));
        for (std::size_t code = 0; code < H; ++code) {
          detail::decode_history(code, N, ys);
          k.probs(HistoryView{ys, xs, d, true}, p1);
          k.probs(HistoryView{ys, alt, d, true}, p2);
          e[s] = std::max(e[s], tv_distance(p1, p2) / dist);
        }
        std::copy(xs.begin() + static_cast<std::ptrdiff_t>(s * d),
                  xs.begin() + static_cast<std::ptrdiff_t>((s + 1) * d),
                  alt.begin() + static_cast<std::ptrdiff_t>(s * d));
      }
    }
  });
  return DecaySeq(e);
}

inline bool enumerable(const KernelHandle& k) {
  try {
    detail::check_enumerable(k);
    return true;
  } catch (const UnsupportedError&) {
    return false;
  }
}

/// Certified b_m: the declared envelope when present, exact enumeration
/// otherwise. The result is extended with zeros (finite tail) or by the
/// envelope's tail model up to `horizon`.
inline DecaySeq b_seq_certified(const KernelHandle& k, std::size_t horizon) {
  if (!k.meta.b.empty()) {
    DecaySeq b(k.meta.b.prefix(horizon + 1), k.meta.b.tail());
    return b;
  }
  if (enumerable(k)) return DecaySeq(enumerate_b(k).prefix(horizon + 1));
  throw UnsupportedError("kernel '" + k.name + "' has no b envelope and cannot be enumerated");
}

inline DecaySeq e_seq_certified(const KernelHandle& k, std::size_t horizon) {
  if (!k.meta.e.empty()) return DecaySeq(k.meta.e.prefix(horizon + 1), k.meta.e.tail());
  if (k.cov_dim == 0) return DecaySeq::zeros(horizon + 1);
  if (enumerable(k)) return DecaySeq(enumerate_e(k).prefix(horizon + 1));
  throw UnsupportedError("kernel '" + k.name + "' has no e envelope and cannot be enumerated");
}

/// Largest finite-difference TV / |dx|_1 over random one-lag covariate
/// perturbations; a spot check of the e envelope.
inline double covariate_sensitivity_probe(const KernelHandle& k, std::span<const Category> past_y,
                                          std::span<const double> past_x_recent_first, std::size_t lag,
                                          std::size_t coord, double h) {
  const std::size_t d = k.cov_dim;
  std::vector<double> a(past_x_recent_first.begin(), past_x_recent_first.end());
  std::vector<double> b = a;
  if ((lag + 1) * d > a.size()) throw DimensionError("probe: covariate history too short");
  b[lag * d + coord] += h;
  auto p = k.probs(HistoryView{past_y, a, d, true});
  auto q = k.probs(HistoryView{past_y, b, d, true});
  return tv_distance(p, q) / std::abs(h);
}

/// Kernel from an arbitrary evaluator with finite memory in y and x.
/// Decay data come from exact enumeration when feasible.
inline KernelHandle make_function_kernel(std::string name, int categories, std::size_t cov_dim,
                                         std::size_t memory_y, std::size_t memory_x, KernelEvalFn fn,
                                         std::vector<std::vector<double>> covariate_support = {}) {
  if (categories < 2) throw DomainError("kernel needs at least two categories");
  KernelHandle k;
  k.name = std::move(name);
  k.categories = categories;
  k.cov_dim = cov_dim;
  k.truncation = {memory_y, cov_dim == 0 ? 0 : memory_x};
  k.exact_memory = true;
  k.eval = std::move(fn);
  k.covariate_support = std::move(covariate_support);
  if (enumerable(k)) {
    k.meta.b = enumerate_b(k);
    k.meta.e = enumerate_e(k);
    k.meta.b0_certificate = k.meta.b.at(0);
  }
  return k;
}

/// Kernel without covariates given by a table: row index encodes the memory
/// lags with y_{t-1} as the least significant base-N digit; each row holds N
/// probabilities.
inline KernelHandle make_table_kernel(std::string name, int categories, std::size_t memory,
                                      std::vector<double> table) {
  const std::size_t N = static_cast<std::size_t>(categories);
  const std::size_t rows = detail::ipow(N, memory);
  if (table.size() != rows * N) throw DimensionError("table kernel: expected N^memory rows of N probabilities");
  for (std::size_t r = 0; r < rows; ++r) {
    ProbVector check(std::vector<double>(table.begin() + static_cast<std::ptrdiff_t>(r * N),
                                         table.begin() + static_cast<std::ptrdiff_t>((r + 1) * N)),
                     1e-10);
    (void)check;
  }
  auto shared = std::make_shared<std::vector<double>>(std::move(table));
  auto fn = [shared, N, memory](const HistoryView& h, std::span<double> out) {
    std::size_t code = 0, mult = 1;
    for (std::size_t m = 1; m <= memory; ++m) {
      code += static_cast<std::size_t>(h.y_lag(m)) * mult;
      mult *= N;
    }
    std::copy_n(shared->data() + code * N, N, out.data());
  };
  return make_function_kernel(std::move(name), categories, 0, memory, 0, fn);
}

/// First-order Markov chain with row-stochastic matrix P (row = y_{t-1}).
inline KernelHandle make_markov_kernel(std::string name, const std::vector<std::vector<double>>& P) {
  std::vector<double> flat;
  for (const auto& row : P) {
    if (row.size() != P.size()) throw DimensionError("markov kernel: matrix must be square");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return make_table_kernel(std::move(name), static_cast<int>(P.size()), 1, std::move(flat));
}

/// sup over pasts of TV between two kernels on the same alphabet, by
/// enumeration over the larger memory. Requires finite memory.
inline double sup_kernel_tv(const KernelHandle& a, const KernelHandle& b) {
  if (a.categories != b.categories || a.cov_dim != b.cov_dim) throw DimensionError("sup_kernel_tv: kernels differ in shape");
  detail::check_enumerable(a);
  detail::check_enumerable(b);
  const std::size_t N = a.N();
  const std::size_t M = std::max(a.truncation.max_lag_y, b.truncation.max_lag_y);
  const std::size_t H = detail::ipow(N, M);
  const std::size_t rows = std::max(detail::covariate_rows(a), detail::covariate_rows(b));
  const auto& support = a.covariate_support.empty() ? b.covariate_support : a.covariate_support;
  std::vector<Category> ys(M);
  std::vector<double> p(N), q(N);
  double best = 0.0;
  detail::for_each_covariate_history(support, a.cov_dim, rows, [&](std::span<const double> xs) {
    for (std::size_t code = 0; code < H; ++code) {
      detail::decode_history(code, N, ys);
      a.probs(HistoryView{ys, xs, a.cov_dim, true}, p);
      b.probs(HistoryView{ys, xs, b.cov_dim, true}, q);
      best = std::max(best, tv_distance(p, q));
    }
  });
  return best;
}

}  // namespace catchain
