#pragma once

#include <stdexcept>
#include <string>

namespace anyshot {

// Root of every error raised by the library. Each subtype names the failure
// class so callers (and the CLI) can map it to a message or exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file: bad magic, unsupported version, inconsistent header.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Well-formed header but invalid payload (truncation, label out of range,
// non-finite values).
class CorruptionError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

class EpisodeError : public Error {
 public:
  using Error::Error;
};

class MappingError : public Error {
 public:
  using Error::Error;
};

class MissingEmbeddingError : public Error {
 public:
  using Error::Error;
};

class DegenerateTaxonomyError : public Error {
 public:
  using Error::Error;
};

class RankError : public Error {
 public:
  using Error::Error;
};

class UndefinedApError : public ContractError {
 public:
  using ContractError::ContractError;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace anyshot
