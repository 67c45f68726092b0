#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spdm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidParams : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class NonSquareGrid : public Error {
 public:
  using Error::Error;
};

class TimeOutOfRange : public Error {
 public:
  using Error::Error;
};

class SingularAtTerminal : public Error {
 public:
  using Error::Error;
};

class DegenerateCoupling : public Error {
 public:
  using Error::Error;
};

class UnsupportedSize : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Base of failures caused by floating-point breakdown rather than bad input.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class NonPsd : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DivergedLoss : public NumericalError {
 public:
  DivergedLoss(std::size_t step, const std::string& what)
      : NumericalError(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

class NonFiniteState : public NumericalError {
 public:
  NonFiniteState(std::size_t step, const std::string& what)
      : NumericalError(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace spdm
