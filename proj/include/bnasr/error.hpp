#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bnasr {

// Error classes. The CLI maps each kind to an exit code.
enum class ErrorKind { kShape, kFormat, kParse, kConfig, kData, kContract, kNumeric };

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kData: return "data";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kNumeric: return "numeric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kShape, what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

struct ContractViolation : Error {
  explicit ContractViolation(const std::string& what) : Error(ErrorKind::kContract, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

/// Binary container problem (WAV, checkpoint, feature cache) at a byte offset.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(ErrorKind::kFormat, what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Text format problem (ARPA, manifest, index) at a 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(ErrorKind::kParse, what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace bnasr
