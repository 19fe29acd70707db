#pragma once

#include <stdexcept>
#include <string>

namespace flatmin {

// Base class for all library errors. The CLI maps these to exit codes:
// usage/config -> 1, parse -> 2, numeric -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration: bad sizes, missing required settings, out-of-range knobs.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed input files; message names the offending byte or line offset.
struct ParseError : Error {
    using Error::Error;
};

// Non-finite value encountered; message carries the location (layer, sample, step).
struct NumericError : Error {
    using Error::Error;
};

// Parameter/model shape mismatch.
struct ArchitectureError : ConfigError {
    using ConfigError::ConfigError;
};

// A filter group has (near-)zero norm; message names layer and filter index.
struct DegenerateFilterError : NumericError {
    using NumericError::NumericError;
};

// Gradient too small to define a search direction.
struct UndefinedDirectionError : NumericError {
    using NumericError::NumericError;
};

// A bracketing search ran out of its admissible interval.
struct NonBracketableError : NumericError {
    using NumericError::NumericError;
};

// Rank correlation undefined (an input has zero variance).
struct UndefinedCorrelationError : Error {
    using Error::Error;
};

// Min-max normalization of a constant vector.
struct DegenerateNormalizationError : Error {
    using Error::Error;
};

}  // namespace flatmin
