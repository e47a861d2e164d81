#include <cstdlib>

#include <fmt/format.h>
#include <httplib.h>

#include "cref/error.hpp"
#include "cref/llm.hpp"

using nlohmann::json;

namespace cref {

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("endpoint '{}' lacks a scheme", url));
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

bool mentions_context_length(const std::string& body) {
  return body.find("context_length") != std::string::npos ||
         body.find("maximum context length") != std::string::npos;
}

}  // namespace

LiveProvider::LiveProvider(LiveProviderConfig config)
    : config_(std::move(config)), limiter_(config_.requests_per_minute) {}

ProviderReply LiveProvider::complete(const ChatSession& session) {
  const Endpoint endpoint = split_endpoint(config_.endpoint);
  json messages = json::array();
  for (const auto& turn : session.turns) {
    messages.push_back({{"role", to_string(turn.role)}, {"content", turn.content}});
  }
  const json body = {{"model", config_.model},
                     {"messages", messages},
                     {"temperature", session.params.temperature},
                     {"top_p", session.params.top_p},
                     {"max_tokens", session.params.max_tokens}};

  httplib::Headers headers;
  if (!config_.credential_env.empty()) {
    const char* credential = std::getenv(config_.credential_env.c_str());
    if (!credential || !*credential) {
      throw Error(ErrorCode::kProvider,
                  fmt::format("environment variable {} is not set", config_.credential_env));
    }
    headers.emplace("Authorization", std::string("Bearer ") + credential);
  }

  limiter_.acquire();
  httplib::Client client(endpoint.origin);
  client.set_connection_timeout(30, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);
  client.set_write_timeout(config_.timeout_seconds, 0);
  auto response = client.Post(endpoint.path, headers, body.dump(), "application/json");
  if (!response) {
    throw TransientProviderError(
        fmt::format("request failed: {}", httplib::to_string(response.error())));
  }
  if (response->status == 429 || response->status >= 500) {
    throw TransientProviderError(fmt::format("HTTP {}", response->status));
  }
  if (response->status != 200) {
    if (mentions_context_length(response->body)) {
      throw Error(ErrorCode::kContextLength, "provider rejected the context length");
    }
    throw Error(ErrorCode::kProvider,
                fmt::format("HTTP {}: {}", response->status, response->body.substr(0, 500)));
  }

  ProviderReply reply;
  try {
    const json parsed = json::parse(response->body);
    reply.content = parsed.at("choices").at(0).at("message").at("content").get<std::string>();
    if (parsed.contains("usage")) {
      const auto& usage = parsed.at("usage");
      if (usage.contains("prompt_tokens")) reply.prompt_tokens = usage.at("prompt_tokens").get<std::int64_t>();
      if (usage.contains("completion_tokens")) {
        reply.completion_tokens = usage.at("completion_tokens").get<std::int64_t>();
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kProvider, fmt::format("malformed provider response: {}", e.what()));
  }
  return reply;
}

}  // namespace cref
