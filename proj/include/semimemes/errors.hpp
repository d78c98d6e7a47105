#pragma once

#include <stdexcept>
#include <string>

namespace semimemes {

// Each category maps to one CLI exit code (see tools/semimemes.cpp).

/// Bad or inconsistent configuration (exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input files, id mismatches, broken checkpoint chains (exit code 3).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values or diverged training (exit code 4).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace semimemes
