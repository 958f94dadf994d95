#pragma once
#include <stdexcept>

namespace slotkit {

// Error taxonomy, mapped to CLI exit codes: argument/configuration errors are
// usage (2), format/data errors are 3, numerical failures are 4.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace slotkit
