#pragma once

#include <stdexcept>
#include <string>

namespace fedleak {

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor dimension disagreement (always names the offending shapes).
struct ShapeError : Error {
    using Error::Error;
};

/// Violated value-level precondition (non-normalized label, bad range, ...).
struct ValidationError : Error {
    using Error::Error;
};

/// Malformed file contents; the message carries a byte offset where known.
struct ParseError : Error {
    using Error::Error;
};

/// Filesystem-level failure (missing file, short write, ...).
struct IoError : Error {
    using Error::Error;
};

/// Optimizer hit a non-finite loss or gradient; message names the iteration.
struct OptimAbort : Error {
    using Error::Error;
};

/// Bad experiment configuration; the message names the offending key.
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace fedleak
