#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pagectx {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Input file or config that does not satisfy its schema.
struct FormatError : Error {
  FormatError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line(line) {}
  std::size_t line;
};

/// Iterative solver ran out of iterations before meeting its tolerance.
struct ConvergenceError : Error {
  using Error::Error;
};

/// Non-finite loss or gradient during optimization. `index` is the step or
/// example at which it was detected.
struct DivergenceError : Error {
  DivergenceError(const std::string& what, std::size_t index) : Error(what), index(index) {}
  std::size_t index;
};

}  // namespace pagectx
