#pragma once

#include <stdexcept>
#include <string>

namespace aspectmf {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kData = 2,
  kDivergence = 3,
  kVerification = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ExitCode::kUsage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::kData, what) {}
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::string group)
      : Error(ExitCode::kDivergence, what), group_(std::move(group)) {}
  const std::string& group() const noexcept { return group_; }

 private:
  std::string group_;
};

}  // namespace aspectmf
