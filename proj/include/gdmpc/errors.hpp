#pragma once

#include <stdexcept>
#include <string>

namespace gdmpc {

// Invalid or inconsistent configuration / input files. CLI exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values, degenerate channels, diverged optimization. CLI exit code 3.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Digest mismatch or malformed artifact files. CLI exit code 4.
struct IntegrityError : std::runtime_error {
  explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: shape mismatches, out-of-domain arguments, double backward.
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace gdmpc
