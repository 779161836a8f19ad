#pragma once

#include <stdexcept>
#include <string>

namespace catchain {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched lengths or dimensions between arguments.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// b_0 >= 1: the one-step sensitivity to the past is not a contraction.
class ContractionError : public Error {
 public:
  using Error::Error;
};

/// An infinite sum required by a bound does not converge.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// A numeric certificate (b_0 < 1, stationarity, Lipschitz sweep) failed.
class CertificationError : public Error {
 public:
  using Error::Error;
};

/// The requested computation is not available for this input.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (non-finite covariates, categories out of range).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Non-finite intermediate in a latent recursion.
class OverflowError : public Error {
 public:
  using Error::Error;
};

/// A requested accuracy cannot be reached within the allowed horizon.
class HorizonError : public Error {
 public:
  using Error::Error;
};

/// Invalid or unknown configuration entries.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace catchain
