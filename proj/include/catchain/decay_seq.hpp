#pragma once

// Nonnegative sequences indexed from 0 with an explicit model for the values
// beyond the stored prefix. Used for b_m, b*_m, e_s, a_t and c_t alike.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <gsl/gsl_sf_zeta.h>

#include "catchain/csv.hpp"
#include "catchain/error.hpp"

namespace catchain {

enum class TailKind { Finite, Geometric, Polynomial };

/// How a sequence continues past its last stored index n-1.
///   Finite:     zero.
///   Geometric:  v[n-1] * rate^(m-n+1).
///   Polynomial: scale * (m+1)^(-exponent).
struct TailModel {
  TailKind kind = TailKind::Finite;
  double rate = 0.0;
  double scale = 0.0;
  double exponent = 0.0;

  static TailModel finite() { return {}; }
  static TailModel geometric(double rate) {
    if (!(rate > 0.0 && rate < 1.0)) throw DomainError("geometric tail rate must lie in (0,1)");
    return {TailKind::Geometric, rate, 0.0, 0.0};
  }
  static TailModel polynomial(double scale, double exponent) {
    if (!(scale >= 0.0) || !(exponent > 0.0)) throw DomainError("polynomial tail needs scale >= 0, exponent > 0");
    return {TailKind::Polynomial, 0.0, scale, exponent};
  }
};

inline std::string to_string(TailKind k) {
  switch (k) {
    case TailKind::Finite: return "finite";
    case TailKind::Geometric: return "geometric";
    case TailKind::Polynomial: return "polynomial";
  }
  return "?";
}

class DecaySeq {
 public:
  DecaySeq() = default;

  explicit DecaySeq(std::vector<double> values, TailModel tail = TailModel::finite())
      : v_(std::move(values)), tail_(tail) {
    for (double x : v_) {
      if (!std::isfinite(x) || x < 0.0) throw DomainError("DecaySeq: values must be finite and nonnegative");
    }
  }

  static DecaySeq zeros(std::size_t n) { return DecaySeq(std::vector<double>(n, 0.0)); }

  /// values[m] = first * rate^m for m < n, continued geometrically.
  static DecaySeq geometric(double first, double rate, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t m = 0; m < n; ++m) v[m] = first * std::pow(rate, static_cast<double>(m));
    return DecaySeq(std::move(v), TailModel::geometric(rate));
  }

  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }
  const std::vector<double>& values() const { return v_; }
  const TailModel& tail() const { return tail_; }
  void set_tail(TailModel t) { tail_ = t; }

  /// Value at any index, using the tail model past the stored prefix.
  double at(std::size_t m) const {
    if (m < v_.size()) return v_[m];
    switch (tail_.kind) {
      case TailKind::Finite: return 0.0;
      case TailKind::Geometric:
        if (v_.empty()) return 0.0;
        return v_.back() * std::pow(tail_.rate, static_cast<double>(m - v_.size() + 1));
      case TailKind::Polynomial:
        return tail_.scale * std::pow(static_cast<double>(m) + 1.0, -tail_.exponent);
    }
    return 0.0;
  }

  double operator[](std::size_t m) const { return at(m); }

  bool summable() const { return tail_.kind != TailKind::Polynomial || tail_.exponent > 1.0; }

  /// Sum over m >= n of the tail model (beyond the stored prefix only).
  double tail_sum() const {
    const std::size_t n = v_.size();
    switch (tail_.kind) {
      case TailKind::Finite: return 0.0;
      case TailKind::Geometric:
        if (v_.empty()) return 0.0;
        return v_.back() * tail_.rate / (1.0 - tail_.rate);
      case TailKind::Polynomial:
        if (tail_.scale == 0.0) return 0.0;
        if (!(tail_.exponent > 1.0)) throw DivergenceError("DecaySeq: polynomial tail with exponent <= 1 is not summable");
        return tail_.scale * gsl_sf_hzeta(tail_.exponent, static_cast<double>(n) + 1.0);
    }
    return 0.0;
  }

  /// Sum over all m >= from, stored part plus tail.
  double sum_from(std::size_t from) const {
    double s = 0.0;
    for (std::size_t m = from; m < v_.size(); ++m) s += v_[m];
    if (from <= v_.size()) return s + tail_sum();
    // Start lies inside the tail.
    switch (tail_.kind) {
      case TailKind::Finite: return 0.0;
      case TailKind::Geometric: return at(from) / (1.0 - tail_.rate);
      case TailKind::Polynomial:
        if (tail_.scale == 0.0) return 0.0;
        if (!(tail_.exponent > 1.0)) throw DivergenceError("DecaySeq: polynomial tail with exponent <= 1 is not summable");
        return tail_.scale * gsl_sf_hzeta(tail_.exponent, static_cast<double>(from) + 1.0);
    }
    return s;
  }

  double total() const { return sum_from(0); }

  /// Dense vector of the first n values (tail-extended if needed).
  std::vector<double> prefix(std::size_t n) const {
    std::vector<double> out(n);
    for (std::size_t m = 0; m < n; ++m) out[m] = at(m);
    return out;
  }

  bool is_nonincreasing(double tol = 1e-15) const {
    for (std::size_t m = 1; m < v_.size(); ++m)
      if (v_[m] > v_[m - 1] + tol) return false;
    if (tail_.kind == TailKind::Polynomial && !v_.empty() && at(v_.size()) > v_.back() + tol) return false;
    return true;
  }

  void require_nonincreasing(const std::string& what) const {
    for (std::size_t m = 1; m < v_.size(); ++m) {
      if (v_[m] > v_[m - 1] + 1e-15) {
        throw DomainError(what + ": sequence increases at index " + std::to_string(m));
      }
    }
  }

  std::string to_csv() const {
    CsvWriter w({"m", "value"});
    for (std::size_t m = 0; m < v_.size(); ++m) w.row({static_cast<double>(m), v_[m]});
    return w.str();
  }

  static DecaySeq from_csv_text(std::string_view text) {
    auto t = parse_csv(text);
    const auto cm = t.column("m");
    const auto cv = t.column("value");
    std::vector<double> v;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      if (t.rows[i][cm] != static_cast<double>(i)) throw InputError("DecaySeq csv: indices must be 0,1,2,...");
      v.push_back(t.rows[i][cv]);
    }
    return DecaySeq(std::move(v));
  }

  static DecaySeq read_csv_file(const std::filesystem::path& p) { return from_csv_text(read_file(p)); }

 private:
  std::vector<double> v_;
  TailModel tail_;
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::size_t n = 0;
};

/// Ordinary least squares of y on x. R^2 is 1 for an exact fit, including
/// a constant y.
inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  LinearFit f;
  f.n = x.size();
  if (x.size() != y.size()) throw DimensionError("linear_fit: length mismatch");
  if (x.size() < 2) return f;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) return f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    sse += r * r;
  }
  f.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  return f;
}

/// Geometric-versus-polynomial classification of a decaying sequence.
struct DecayFit {
  TailKind kind = TailKind::Finite;
  LinearFit geometric;   // log v against m; rate = exp(slope)
  LinearFit polynomial;  // log v against log(m+1); exponent = -slope
  double rate() const { return std::exp(geometric.slope); }
  double exponent() const { return -polynomial.slope; }
};

/// Fits both decay shapes on the positive entries of v[from..] and keeps the
/// one with the higher R^2. All-zero input classifies as Finite.
inline DecayFit fit_decay(std::span<const double> v, std::size_t from = 0) {
  std::vector<double> m, lm, lv;
  for (std::size_t i = from; i < v.size(); ++i) {
    if (v[i] > 0.0 && std::isfinite(std::log(v[i]))) {
      m.push_back(static_cast<double>(i));
      lm.push_back(std::log(static_cast<double>(i) + 1.0));
      lv.push_back(std::log(v[i]));
    }
  }
  DecayFit f;
  if (m.size() < 3) return f;
  f.geometric = linear_fit(m, lv);
  f.polynomial = linear_fit(lm, lv);
  f.kind = f.geometric.r2 >= f.polynomial.r2 ? TailKind::Geometric : TailKind::Polynomial;
  return f;
}

/// Tail model extrapolating the last part of `v`: fitted on the second half
/// of the stored values, zero if the sequence ends in zeros.
inline TailModel extrapolated_tail(std::span<const double> v) {
  if (v.empty() || v.back() <= 0.0) return TailModel::finite();
  const std::size_t from = v.size() / 2;
  const auto fit = fit_decay(v, from);
  if (fit.kind == TailKind::Geometric) {
    const double r = fit.rate();
    if (r < 1.0) return TailModel::geometric(std::max(r, 1e-300));
    throw DivergenceError("sequence does not decay over the stored horizon");
  }
  if (fit.kind == TailKind::Polynomial) {
    const double k = fit.exponent();
    if (!(k > 0.0)) throw DivergenceError("sequence does not decay over the stored horizon");
    const double n = static_cast<double>(v.size() - 1);
    return TailModel::polynomial(v.back() * std::pow(n + 1.0, k), k);
  }
  return TailModel::finite();
}

}  // namespace catchain
