#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace unigen {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GrammarError : public Error {
 public:
  using Error::Error;
};

class LexError : public Error {
 public:
  LexError(std::size_t offset, const std::string& what)
      : Error(what), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Raised by the parser. `position` is the 0-based index of the offending
/// token (== token count when input ended early).
class ParseError : public Error {
 public:
  ParseError(std::size_t position, std::vector<std::string> expected,
             const std::string& what)
      : Error(what), position_(position), expected_(std::move(expected)) {}
  std::size_t position() const { return position_; }
  const std::vector<std::string>& expected() const { return expected_; }

 private:
  std::size_t position_;
  std::vector<std::string> expected_;
};

/// An action that does not fit the frontier. `position` is 1-based.
class InvalidActionError : public Error {
 public:
  InvalidActionError(std::size_t position, std::string expected,
                     const std::string& what)
      : Error(what), position_(position), expected_(std::move(expected)) {}
  std::size_t position() const { return position_; }
  const std::string& expected() const { return expected_; }

 private:
  std::size_t position_;
  std::string expected_;
};

class IncompleteError : public Error {
 public:
  using Error::Error;
};

class TrailingActionError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset row. `line` is 1-based.
class FormatError : public Error {
 public:
  FormatError(std::size_t line, const std::string& what)
      : Error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

class DegenerateDistributionError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class EmptyCorpusError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace unigen
