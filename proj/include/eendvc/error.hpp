// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace eendvc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class EncodingError : public Error {
 public:
  using Error::Error;
};

/// A window holds more distinct speakers than the powerset label space allows.
class TooManySpeakersError : public Error {
 public:
  TooManySpeakersError(int speakers, int max_speakers)
      : Error("window has " + std::to_string(speakers) + " speakers, label space allows " +
              std::to_string(max_speakers)),
        speakers_(speakers) {}
  int speakers() const noexcept { return speakers_; }

 private:
  int speakers_;
};

class CapabilityError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace eendvc
