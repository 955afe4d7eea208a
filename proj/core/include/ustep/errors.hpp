#pragma once

#include <stdexcept>
#include <string>

namespace ustep {

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or violated call contract (CLI exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

/// Tensor/frame dimension mismatch (CLI exit code 3).
struct ShapeError : Error {
    using Error::Error;
};

/// Malformed or corrupt data: bad magic, truncation, non-finite values
/// (CLI exit code 3).
struct DataError : Error {
    using Error::Error;
};

/// Filesystem failure: unreadable or unwritable path (CLI exit code 4).
struct IoError : Error {
    using Error::Error;
};

} // namespace ustep
