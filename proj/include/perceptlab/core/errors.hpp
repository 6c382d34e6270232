#pragma once

#include <stdexcept>
#include <string>

namespace perceptlab {

// Error taxonomy mapped to CLI exit codes: validation/config -> 2,
// divergence -> 3, I/O -> 4, everything else -> 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct DomainError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct RegistryError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct DivergenceError : Error {
    using Error::Error;
};

struct DegenerateWeightsError : Error {
    using Error::Error;
};

struct FitError : Error {
    using Error::Error;
};

} // namespace perceptlab
