#pragma once

#include <stdexcept>
#include <string>

namespace anyres {

/// Non-finite loss or gradient during training. Maps to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or incompatible file (manifest, checkpoint, config).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace anyres
