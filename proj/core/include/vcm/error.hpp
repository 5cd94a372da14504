#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vcm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// The normal-equation system for one coefficient block is not positive
/// definite (typically lambda_k = 0 and a basis function sees no data).
class RankDeficiency : public Error {
 public:
  RankDeficiency(std::size_t term, const std::string& what)
      : Error(what), term_(term) {}
  std::size_t term() const noexcept { return term_; }

 private:
  std::size_t term_;
};

class SingularMatrix : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace vcm
