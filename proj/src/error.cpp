#include "cref/error.hpp"

namespace cref {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kWrongState: return "wrong_state";
    case ErrorCode::kCorpus: return "corpus";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kToolchain: return "toolchain";
    case ErrorCode::kHost: return "host";
    case ErrorCode::kProvider: return "provider";
    case ErrorCode::kProviderUnavailable: return "provider_unavailable";
    case ErrorCode::kContextLength: return "context_length";
    case ErrorCode::kStore: return "store";
  }
  return "unknown";
}

}  // namespace cref
