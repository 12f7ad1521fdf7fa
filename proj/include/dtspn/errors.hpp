#pragma once

#include <stdexcept>
#include <string>

namespace dtspn {

/// Bad user input: arguments, config values, malformed files. The CLI maps
/// this family to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Dimension mismatch between artifacts (dataset, checkpoint, instance).
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// The stitched expert path missed a task. Should be unreachable.
class SensingGap : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Training produced a non-finite parameter.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dtspn
