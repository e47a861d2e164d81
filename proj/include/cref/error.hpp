#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cref {

enum class ErrorCode {
  kInvalidArgument,
  kNotFound,
  kWrongState,
  kCorpus,
  kParse,
  kToolchain,
  kHost,
  kProvider,
  kProviderUnavailable,
  kContextLength,
  kStore,
};

std::string_view to_string(ErrorCode code);

/// Base exception for everything the library raises on purpose. The code
/// lets callers (CLI exit status, HTTP status mapping) react without
/// string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cref
