#pragma once

#include <stdexcept>
#include <string>

namespace mesin {

// Precondition or shape violation in an API call.
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf surfaced from a numeric kernel or a diverging optimization.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or out-of-vocabulary input data.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration (hyperparameters, generator spec, CLI flags).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File parse/read/write failure.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mesin
