#pragma once

#include <stdexcept>
#include <string>

namespace upet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or extents that do not satisfy an operator's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the computation record (double backward, non-scalar loss, ...).
class AutogradError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument values that are not shape related.
class ValueError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A file exists but its content violates the documented format.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace upet
