#pragma once

#include <stdexcept>
#include <string>

namespace rf4d {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A numeric argument is outside the operation's domain (rcs <= 0, t > 1, ...).
struct DomainError : Error {
  using Error::Error;
};

/// An index is outside the addressed grid or sequence.
struct IndexError : Error {
  using Error::Error;
};

/// Vector/matrix dimensions do not match the declared contract.
struct ShapeError : Error {
  using Error::Error;
};

/// A data structure violates one of its invariants.
struct ValidationError : Error {
  using Error::Error;
};

/// A file is missing or an OS-level read/write failed.
struct IoError : Error {
  using Error::Error;
};

/// A file exists but its content does not parse.
struct FormatError : Error {
  using Error::Error;
};

/// A binary payload's byte count disagrees with its metadata.
struct PayloadSizeError : Error {
  using Error::Error;
};

/// A computation produced or received non-finite values.
struct NumericError : Error {
  using Error::Error;
};

/// Inputs are degenerate for the requested operation (empty point set, zero extent, ...).
struct DegenerateError : Error {
  using Error::Error;
};

}  // namespace rf4d
