#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace loancast {

// Caller broke an operation's precondition (bad argument, bad state).
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents do not line up for the requested operation.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Malformed, truncated, or unwritable on-disk artifact.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Config-file or flag parsing problem; carries the offending line when known.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

enum class Mode { kTrain, kEval };

namespace detail {
template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace detail

}  // namespace loancast

#define LOANCAST_CHECK(cond, ...)                                          \
  do {                                                                     \
    if (!(cond)) throw ::loancast::ContractError(::loancast::detail::cat(__VA_ARGS__)); \
  } while (0)

#define LOANCAST_CHECK_DIM(cond, ...)                                      \
  do {                                                                     \
    if (!(cond)) throw ::loancast::DimensionError(::loancast::detail::cat(__VA_ARGS__)); \
  } while (0)
