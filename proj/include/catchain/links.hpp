#pragma once

// Link functions F (cumulative distribution functions on R) and the sup-TV
// certificates for shifted links used to show b_0 < 1.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "catchain/error.hpp"

namespace catchain {

enum class LinkKind { Logistic, Probit, Custom };

class LinkFunction {
 public:
  static LinkFunction logistic() { return LinkFunction(LinkKind::Logistic, 0.25, {}); }
  static LinkFunction probit() { return LinkFunction(LinkKind::Probit, 1.0 / std::sqrt(2.0 * std::numbers::pi), {}); }

  /// User-supplied CDF with a declared Lipschitz constant. The declaration
  /// is checked by a finite-difference sweep over [-50, 50].
  static LinkFunction custom(std::function<double(double)> cdf, double lipschitz) {
    LinkFunction f(LinkKind::Custom, lipschitz, std::move(cdf));
    const double seen = f.sweep_lipschitz();
    if (seen > lipschitz * (1.0 + 1e-6) + 1e-12) {
      throw CertificationError("custom link: observed slope " + std::to_string(seen) +
                               " exceeds declared Lipschitz constant " + std::to_string(lipschitz));
    }
    return f;
  }

  static LinkFunction from_name(const std::string& name) {
    if (name == "logistic") return logistic();
    if (name == "probit") return probit();
    throw ConfigError("unknown link '" + name + "' (expected logistic or probit)");
  }

  LinkKind kind() const { return kind_; }
  double lipschitz() const { return lip_; }

  std::string name() const {
    switch (kind_) {
      case LinkKind::Logistic: return "logistic";
      case LinkKind::Probit: return "probit";
      case LinkKind::Custom: return "custom";
    }
    return "?";
  }

  double operator()(double z) const {
    switch (kind_) {
      case LinkKind::Logistic:
        if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
        else {
          const double ez = std::exp(z);
          return ez / (1.0 + ez);
        }
      case LinkKind::Probit: return 0.5 * std::erfc(-z / std::numbers::sqrt2);
      case LinkKind::Custom: return cdf_(z);
    }
    return 0.0;
  }

  /// 1 - F(z) without cancellation for the built-in links.
  double upper(double z) const {
    switch (kind_) {
      case LinkKind::Logistic: return (*this)(-z);
      case LinkKind::Probit: return 0.5 * std::erfc(z / std::numbers::sqrt2);
      case LinkKind::Custom: return 1.0 - cdf_(z);
    }
    return 0.0;
  }

  /// F'(z) for the built-in links; central difference for custom ones.
  double density(double z) const {
    switch (kind_) {
      case LinkKind::Logistic: {
        const double p = (*this)(z);
        return p * (1.0 - p);
      }
      case LinkKind::Probit: return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
      case LinkKind::Custom: {
        const double h = 1e-6;
        return (cdf_(z + h) - cdf_(z - h)) / (2 * h);
      }
    }
    return 0.0;
  }

  /// Largest finite-difference slope on a uniform grid over [-50, 50].
  double sweep_lipschitz(double step = 1e-3) const {
    double best = 0.0;
    double prev = (*this)(-50.0);
    for (double z = -50.0 + step; z <= 50.0; z += step) {
      const double cur = (*this)(z);
      if (cur < prev - 1e-15) throw CertificationError("link function is not nondecreasing");
      best = std::max(best, (cur - prev) / step);
      prev = cur;
    }
    return best;
  }

 private:
  LinkFunction(LinkKind k, double lip, std::function<double(double)> cdf) : kind_(k), lip_(lip), cdf_(std::move(cdf)) {}

  LinkKind kind_;
  double lip_;
  std::function<double(double)> cdf_;
};

/// Grid for the b_0 sup search: z in [lo - c, hi + c] with the given step.
struct B0Grid {
  double lo = -20.0;
  double hi = 20.0;
  double step = 1e-3;
};

struct B0Certificate {
  double value = 0.0;     // rigorous upper bound on the sup
  double grid_sup = 0.0;  // largest value seen on the grid (a lower estimate)
  bool passed = false;
};

/// sup_{|y| <= c, z} |F(z + y) - F(z)| for a monotone link. For monotone F
/// the sup over y sits at y = +-c, so only z is searched. The grid maximum is
/// lifted by the Lipschitz slack L * step and by the tail mass outside the
/// grid, which makes `value` an upper bound.
inline B0Certificate certify_b0_binary(const LinkFunction& F, double c, const B0Grid& grid = {},
                                       double tolerance = 1e-9) {
  if (!(c >= 0.0) || !std::isfinite(c)) throw DomainError("certify_b0: c must be finite and >= 0");
  B0Certificate cert;
  if (c == 0.0) {
    cert.passed = true;
    return cert;
  }
  const double lo = grid.lo - c, hi = grid.hi + c;
  const auto n = static_cast<long>(std::ceil((hi - lo) / grid.step));
  double best = 0.0;
  for (long i = 0; i <= n; ++i) {
    const double z = lo + static_cast<double>(i) * grid.step;
    best = std::max(best, F(z + c) - F(z));
  }
  // Probe far points for the analytic limits.
  for (double z : {-1e6, 1e6}) best = std::max(best, std::abs(F(z + c) - F(z)));
  cert.grid_sup = best;
  const double outside = std::max(F(grid.lo), F.upper(grid.hi));
  cert.value = std::max(best + F.lipschitz() * grid.step, outside);
  cert.value = std::min(cert.value, 1.0);
  cert.passed = cert.value < 1.0 - tolerance;
  if (!cert.passed) {
    throw CertificationError("b0 certification failed: sup TV " + std::to_string(cert.value) + " is not < 1");
  }
  return cert;
}

}  // namespace catchain
