#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cgdm {

// Root of every error raised by the library. Callers that only need a
// message catch this; the CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class MissingArtifactError : public Error {
 public:
  MissingArtifactError(const std::string& what, std::string path)
      : Error(what + ": " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what, double residual = 0.0)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

// Cholesky on a matrix that is not positive definite.
class DefinitenessError : public NumericalError {
 public:
  DefinitenessError(const std::string& what, std::size_t pivot)
      : NumericalError(what + " (pivot " + std::to_string(pivot) + ")"),
        pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

class CalibrationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class GenerationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace cgdm
