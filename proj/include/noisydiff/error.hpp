#pragma once

#include <stdexcept>
#include <string>

namespace noisydiff {

/// Invalid or inconsistent user configuration (CLI exit code 1).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Physics-domain failure, e.g. D is undefined in the ballistic regime (exit code 2).
class PhysicsDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Numerical validity failure: blow-up, boundary breach, empty fit window (exit code 3).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ExitCode : int { Success = 0, Config = 1, PhysicsDomain = 2, Numerical = 3 };

}  // namespace noisydiff
