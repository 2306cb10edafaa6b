#pragma once

#include <stdexcept>
#include <string>

namespace earvit {

// Base class for every error raised by the library. Callers that only care
// about "something went wrong" catch this; the subclasses let the CLI map
// failures onto exit codes.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Tensor extents disagree (matmul inner dims, bad axis, non-scalar loss).
class ShapeError : public Error {
   public:
    using Error::Error;
};

// A numeric argument is outside its admissible range (eps <= 0, rate > 1).
class ParameterError : public Error {
   public:
    using Error::Error;
};

// Patch grid violates the no-truncation / no-gap constraints.
class GridError : public Error {
   public:
    using Error::Error;
};

// Inconsistent model, training or run configuration.
class ConfigError : public Error {
   public:
    using Error::Error;
};

// Caller broke a documented precondition (label outside subset, non-unit rows).
class ContractError : public Error {
   public:
    using Error::Error;
};

// Unreadable or malformed input file.
class FormatError : public Error {
   public:
    using Error::Error;
};

// Dataset tree is missing, empty, or otherwise unusable.
class DatasetError : public Error {
   public:
    using Error::Error;
};

// Numerical failure during a run (NaN gradients, degenerate embeddings).
class NumericError : public Error {
   public:
    using Error::Error;
};

}  // namespace earvit
