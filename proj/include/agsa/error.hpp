#pragma once

#include <stdexcept>
#include <string>

namespace agsa {

// Error categories; each maps to one status code of the C API.
enum class ErrorKind {
  kShape,
  kConfig,
  kState,
  kContract,
  kUnsupported,
  kParse,
  kData,
  kNumeric,
  kIo,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define AGSA_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

AGSA_DEFINE_ERROR(ShapeError, kShape)
AGSA_DEFINE_ERROR(ConfigError, kConfig)
AGSA_DEFINE_ERROR(StateError, kState)
AGSA_DEFINE_ERROR(ContractError, kContract)
AGSA_DEFINE_ERROR(UnsupportedOpError, kUnsupported)
AGSA_DEFINE_ERROR(DataError, kData)
AGSA_DEFINE_ERROR(NumericError, kNumeric)
AGSA_DEFINE_ERROR(IoError, kIo)

#undef AGSA_DEFINE_ERROR

class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error(ErrorKind::kParse, "line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace agsa
