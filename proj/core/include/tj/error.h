#pragma once

#include <stdexcept>
#include <string>

namespace tj {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes (message names both shapes).
struct ShapeError : Error {
    using Error::Error;
};

// Singular systems, rank deficiency, failed factorizations.
struct LinalgError : Error {
    using Error::Error;
};

// Violated operation preconditions or API contracts.
struct ContractError : Error {
    using Error::Error;
};

// Iterative procedures that failed to converge, non-finite values.
struct NumericError : Error {
    using Error::Error;
};

// Malformed input files; carries a line number where applicable.
struct ParseError : Error {
    using Error::Error;
};

// Dataset-level problems (too short streams, bad ids, missing files).
struct DataError : Error {
    using Error::Error;
};

// Training aborts (NaN gradients, diverged loss).
struct TrainError : Error {
    using Error::Error;
};

}  // namespace tj
