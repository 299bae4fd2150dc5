#pragma once

#include <stdexcept>
#include <string>

namespace gcpc {

// Config / CLI argument problem. Maps to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed dataset or checkpoint, or a dimension clash between artifacts.
// Maps to exit code 3.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint container violations: bad magic, version, truncation,
// inconsistent tensor table. Maps to exit code 3.
struct FormatError : DataError {
    explicit FormatError(const std::string& msg) : DataError(msg) {}
};

// NaN/Inf escaped into a computation. Maps to exit code 4.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gcpc
