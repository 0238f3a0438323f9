#pragma once

#include <stdexcept>
#include <string>

namespace civdg {

// Error taxonomy shared by the library and the CLI.  The CLI maps each
// category to a stable exit code (see tools/).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad arguments or malformed inputs (invalid config values, out-of-range ids,
// non-one-hot targets, ...).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape disagreement between arrays.
struct DimensionError : ValidationError {
  using ValidationError::ValidationError;
};

// Data problems: missing files, infeasible subsampling targets, ...
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf detected, or a training step aborted on a non-finite loss.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misuse: stepping an optimizer without gradients, mismatched stores, ...
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// OOD-hygiene and other structural contract violations.  Aborts the run.
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Centering requested for a stratum whose running mean was never seeded.
struct ColdStratumError : StateError {
  explicit ColdStratumError(int stratum)
      : StateError("cold stratum: no running mean for stratum " +
                   std::to_string(stratum)),
        stratum_id(stratum) {}
  int stratum_id;
};

}  // namespace civdg
