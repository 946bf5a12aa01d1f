#pragma once

#include <stdexcept>
#include <string>

namespace efft {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform (dimension mismatch, bad rank, zero dims).
struct ShapeError : Error {
    using Error::Error;
};

/// An operation was called outside its contract (bad enum, bad index range).
struct ContractError : Error {
    using Error::Error;
};

/// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

/// Invalid configuration file or field value.
struct ConfigError : Error {
    using Error::Error;
};

/// File format or filesystem failure.
struct IoError : Error {
    using Error::Error;
};

} // namespace efft
