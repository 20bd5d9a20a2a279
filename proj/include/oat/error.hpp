#pragma once

#include <stdexcept>
#include <string>

namespace oat {

/// Process exit codes used by the command-line front end.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 1,    // bad flags, bad or unknown config keys
  kData = 2,     // missing files, malformed formats, dimension mismatches
  kNumeric = 3,  // undefined numeric situations (e.g. SNR of a zero signal)
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kUsage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::kData, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ExitCode::kNumeric, what) {}
};

/// Errors raised while decoding one of the binary file formats.
class FormatError : public DataError {
 public:
  enum class Kind { kUnsupportedMagic, kMalformedHeader, kTruncatedPayload, kIo };

  FormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace oat
