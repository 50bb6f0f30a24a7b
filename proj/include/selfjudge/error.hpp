#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace selfjudge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text; carries the byte offset where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class RenderError : public Error {
 public:
  using Error::Error;
};

/// A rendered sequence does not fit the token budget even after truncation.
class LengthError : public RenderError {
 public:
  using RenderError::RenderError;
};

/// A judgment could not be produced (e.g. the rendered prompt overflows the context).
class VerdictError : public Error {
 public:
  using Error::Error;
};

/// Two responses are identical where a strict preference is required.
class DegeneratePairError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace selfjudge
