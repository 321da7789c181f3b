#pragma once

#include <stdexcept>
#include <string>

namespace salm2 {

// Base for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller broke an operation precondition (shape mismatch, wrong resolution, ...).
class ContractViolation : public Error {
 public:
  explicit ContractViolation(const std::string& msg) : Error("contract violation: " + msg) {}
};

// Invalid module/model configuration detected at build time.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("configuration error: " + msg) {}
};

// Non-finite values where finite ones are required.
class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(const std::string& msg) : Error("non-finite input rejected: " + msg) {}
};

// Dataset layout / file problems.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error("dataset error: " + msg) {}
};

// Corrupt or incompatible checkpoint archives.
class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& msg) : Error("checkpoint error: " + msg) {}
};

// Requested semantic encoder weights cannot be used. Never silently substituted.
class AdapterUnavailableError : public Error {
 public:
  explicit AdapterUnavailableError(const std::string& msg)
      : Error("adapter unavailable: " + msg + " (pass no weights to select the stub encoder explicitly)") {}
};

// A metric is mathematically undefined for the given inputs.
class MetricError : public Error {
 public:
  explicit MetricError(const std::string& msg) : Error("metric undefined: " + msg) {}
};

}  // namespace salm2
