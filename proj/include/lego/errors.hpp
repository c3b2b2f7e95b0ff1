#pragma once

#include <stdexcept>
#include <string>

namespace lego {

// Broad failure class; the CLI maps each one to its own exit code.
enum class ErrorCategory { config, data, training, analysis };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

// Invalid group order, unknown element ids or names, malformed tables.
class GroupError : public DataError {
 public:
  using DataError::DataError;
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what) : Error(ErrorCategory::training, what) {}
};

// Tensor shape mismatches and autograd contract violations.
class ShapeError : public TrainingError {
 public:
  using TrainingError::TrainingError;
};

class CheckpointError : public TrainingError {
 public:
  using TrainingError::TrainingError;
};

class AnalysisError : public Error {
 public:
  explicit AnalysisError(const std::string& what) : Error(ErrorCategory::analysis, what) {}
};

}  // namespace lego
