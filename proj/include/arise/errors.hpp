#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace arise {

/// Root of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numeric input lies outside the domain of a formula (e.g. non-positive tokens).
class DomainError : public Error {
 public:
  DomainError(std::string message, std::size_t level_index)
      : Error(std::move(message)), level_index_(level_index) {}
  std::size_t level_index() const noexcept { return level_index_; }

 private:
  std::size_t level_index_;
};

/// Structural problem with the arguments of an operation.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A scaling curve could not be built (duplicate token coordinates).
class CurveError : public Error {
 public:
  using Error::Error;
};

/// An operation was called in a state where it is undefined.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Fixed budget smaller than the mandatory probing phase.
class InfeasibleBudgetError : public Error {
 public:
  InfeasibleBudgetError(std::string message, long long minimum)
      : Error(std::move(message)), minimum_(minimum) {}
  long long minimum() const noexcept { return minimum_; }

 private:
  long long minimum_;
};

/// A record field failed validation.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Duplicate (run, sample, level, trial) key in a trace store.
class ConflictError : public Error {
 public:
  using Error::Error;
};

/// One missing (sample, level) configuration of a run.
struct ConfigurationGap {
  std::string sample_id;
  std::size_t level_index = 0;
};

/// A run lacks trials for some configurations (or has none at all).
class IncompleteRunError : public Error {
 public:
  IncompleteRunError(std::string message, std::vector<ConfigurationGap> gaps)
      : Error(std::move(message)), gaps_(std::move(gaps)) {}
  const std::vector<ConfigurationGap>& gaps() const noexcept { return gaps_; }

 private:
  std::vector<ConfigurationGap> gaps_;
};

/// Failure talking to a model backend (transport, HTTP status, timeouts).
class BackendError : public Error {
 public:
  using Error::Error;
};

/// The backend response carried no usable completion-token count.
class TokenExtractionError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// The judge could not produce a verdict. Carries the raw model response.
class JudgeError : public BackendError {
 public:
  JudgeError(const std::string& message, std::string raw_response)
      : BackendError(message), raw_response_(std::move(raw_response)) {}
  const std::string& raw_response() const noexcept { return raw_response_; }

 private:
  std::string raw_response_;
};

/// Request template could not be rendered.
class TemplateError : public Error {
 public:
  using Error::Error;
};

}  // namespace arise
