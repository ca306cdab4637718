#pragma once

#include <stdexcept>
#include <string>

namespace itb {

// Base of every error raised by the library. The CLI maps subclasses to exit
// codes, so new errors should derive from the closest existing category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// attractor generation
class NonFiniteState : public Error {
 public:
  using Error::Error;
};
class GenerationFailed : public Error {
 public:
  using Error::Error;
};
class DegenerateSample : public Error {
 public:
  using Error::Error;
};
class WindowTooLong : public Error {
 public:
  using Error::Error;
};

// storage
class FormatVersionMismatch : public Error {
 public:
  using Error::Error;
};
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};
class IoFailure : public Error {
 public:
  using Error::Error;
};
class EmptyClassSplit : public Error {
 public:
  using Error::Error;
};

// models
class Diverged : public Error {
 public:
  using Error::Error;
};
class ExternalScorerFailure : public Error {
 public:
  using Error::Error;
};
class HandshakeFailed : public ExternalScorerFailure {
 public:
  using ExternalScorerFailure::ExternalScorerFailure;
};
class ProtocolViolation : public ExternalScorerFailure {
 public:
  using ExternalScorerFailure::ExternalScorerFailure;
};
class Timeout : public ExternalScorerFailure {
 public:
  using ExternalScorerFailure::ExternalScorerFailure;
};

// attribution
class SingularRegression : public Error {
 public:
  using Error::Error;
};
class MethodUnsupportedForScorer : public Error {
 public:
  using Error::Error;
};

// evaluation
class NoPositiveRelevance : public Error {
 public:
  using Error::Error;
};
class DegenerateReference : public Error {
 public:
  using Error::Error;
};
class NoValidPairs : public Error {
 public:
  using Error::Error;
};
class InsufficientSamples : public Error {
 public:
  using Error::Error;
};

}  // namespace itb
