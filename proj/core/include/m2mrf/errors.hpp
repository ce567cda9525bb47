#pragma once

#include <stdexcept>
#include <string>

namespace m2mrf {

// Base class for every error the library throws on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor dimension mismatches; the message names both shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid operator / network configuration, raised at construction time.
struct ConfigError : Error {
  using Error::Error;
};

// A caller violated an API precondition (non-scalar loss, nonlinear
// operator passed to a linear-map oracle, iter past the schedule end, ...).
struct ContractError : Error {
  using Error::Error;
};

// Malformed file content. The message carries the byte offset where
// parsing stopped.
struct FormatError : Error {
  using Error::Error;
};

// Filesystem trouble: unreadable, unwritable or missing paths.
struct IoError : Error {
  using Error::Error;
};

}  // namespace m2mrf
