#pragma once

#include <stdexcept>
#include <string>

namespace qdetect {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector/matrix lengths that do not agree with the problem they are used with.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed or non-finite problem coefficients, bad spin/bit values.
class ProblemError : public Error {
 public:
  using Error::Error;
};

class SizeLimitError : public Error {
 public:
  using Error::Error;
};

class ClampError : public Error {
 public:
  using Error::Error;
};

class NudgeError : public Error {
 public:
  using Error::Error;
};

class EncodingError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

class AttackError : public Error {
 public:
  using Error::Error;
};

class SelectionError : public Error {
 public:
  using Error::Error;
};

/// Raised while reading datasets (CSV or QDS1). Carries position context in the message.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment / detection configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Failure while executing a pipeline stage; message is prefixed with the stage.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace qdetect
