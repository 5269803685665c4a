#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace crescendo {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape, extent or channel disagreement between operands.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Argument outside an operation's domain (empty list, rate >= 1, bad index).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data. Carries the byte offset of the first bad record.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Bad or missing configuration key. Line is 0 when the key is absent.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, int line, const std::string& what)
      : Error(line > 0 ? "config key '" + key + "' (line " + std::to_string(line) + "): " + what
                       : "config key '" + key + "': " + what),
        key_(std::move(key)),
        line_(line) {}

  const std::string& key() const noexcept { return key_; }
  int line() const noexcept { return line_; }

 private:
  std::string key_;
  int line_;
};

/// Tables that should share a header but do not. Names the first differing column.
class SchemaError : public Error {
 public:
  SchemaError(std::string column, const std::string& what)
      : Error("column '" + column + "': " + what), column_(std::move(column)) {}

  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

}  // namespace crescendo
