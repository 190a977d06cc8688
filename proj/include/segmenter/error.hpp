#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace segmenter {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value, unknown key, or missing mandatory key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed file content. `offset` is the byte position where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), message_(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string message_;
  std::size_t offset_;
};

// Checkpoint incompatible with the target model, or unreadable.
class LoadError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::string snapshot)
      : Error(what), snapshot_(std::move(snapshot)) {}
  const std::string& snapshot_path() const noexcept { return snapshot_; }

 private:
  std::string snapshot_;
};

}  // namespace segmenter
