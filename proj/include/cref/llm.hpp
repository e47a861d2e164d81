#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cref {

enum class Role { kSystem, kUser, kAssistant };

std::string_view to_string(Role role);
Role role_from_string(std::string_view name);

struct ChatTurn {
  Role role = Role::kUser;
  std::string content;
  std::int64_t token_count = 0;
  /// Assistant acknowledgement produced locally, never sent by a provider.
  bool synthetic = false;

  bool operator==(const ChatTurn&) const = default;
};

struct SamplingParams {
  double temperature = 1.0;
  double top_p = 1.0;
  int max_tokens = 2048;

  void validate() const;
  bool operator==(const SamplingParams&) const = default;
};

/// One dialogue with one provider. Turns alternate user/assistant after an
/// optional leading system turn; token totals always equal the per-turn sums.
struct ChatSession {
  std::string id;
  std::string provider_id;
  /// Routing key used by replay fixtures, e.g. "s101/cref/t1/s1".
  std::string route;
  SamplingParams params;
  std::vector<ChatTurn> turns;
  std::int64_t total_prompt_tokens = 0;
  std::int64_t total_completion_tokens = 0;

  /// Provider-generated assistant turns so far.
  std::size_t generated_turns() const;
  bool operator==(const ChatSession&) const = default;
};

/// Provider-reported usage wins; the fallback is ceil(bytes / 4).
std::int64_t estimate_tokens(std::string_view text,
                             std::optional<std::int64_t> reported = std::nullopt);

struct ProviderReply {
  std::string content;
  std::optional<std::int64_t> prompt_tokens;
  std::optional<std::int64_t> completion_tokens;
};

/// Retryable failure (rate limit, 5xx, network blip).
class TransientProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A chat backend. `complete` receives the session with the pending user turn
/// already appended as its last element.
class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual ProviderReply complete(const ChatSession& session) = 0;
  /// Context window in tokens, when known.
  virtual std::optional<std::int64_t> max_context_tokens() const { return std::nullopt; }
};

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_delay{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_delay{8000};

  std::chrono::milliseconds delay_for(int failed_attempts) const;
};

/// Spaces requests to at most `requests_per_minute`; 0 disables.
class RateLimiter {
 public:
  explicit RateLimiter(int requests_per_minute = 0) : per_minute_(requests_per_minute) {}
  void acquire();

 private:
  int per_minute_;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point next_{};
};

using SleepFn = std::function<void(std::chrono::milliseconds)>;

/// Appends `user_content` and the provider's reply. On any failure the session
/// is left exactly as it was. Transient failures are retried with exponential
/// backoff; exhausting retries raises Error(kProviderUnavailable). An
/// over-long context raises Error(kContextLength) before anything is sent.
std::string send(ChatSession& session, ChatProvider& provider, std::string_view user_content,
                 const RetryPolicy& retry = {}, const SleepFn& sleep = {});

/// Appends a user entry plus a locally synthesized acknowledgement; used for
/// intermediate conversational entries that do not request a repair.
void append_context_entry(ChatSession& session, std::string_view user_content,
                          std::string_view acknowledgement);

void recompute_totals(ChatSession& session);

// ---------------------------------------------------------------- replay --

struct ReplayEntry {
  std::string response;
  std::optional<std::string> prompt_prefix;
  std::optional<std::int64_t> prompt_tokens;
  std::optional<std::int64_t> completion_tokens;
  /// "", "transient", "context_length", "hard" or "unavailable".
  std::string error;
  /// For error entries: how many calls fail before `response` is returned
  /// (0 = always fail).
  int fail_times = 0;
};

struct ReplayScript {
  std::vector<ReplayEntry> entries;
};

/// Scripted responses for one fixture: route -> script. Lookup trims trailing
/// route segments until a key matches; "" is the fixture-wide default.
struct ReplayFixture {
  std::string id;
  std::map<std::string, ReplayScript> scripts;
  std::optional<std::int64_t> max_context_tokens;

  const ReplayScript* lookup(std::string_view route) const;
  static ReplayFixture from_json(const nlohmann::json& j);
};

/// Deterministic test double keyed by (fixture, route, generated-turn index).
class ReplayProvider : public ChatProvider {
 public:
  explicit ReplayProvider(ReplayFixture fixture, bool strict = false);
  ProviderReply complete(const ChatSession& session) override;
  std::optional<std::int64_t> max_context_tokens() const override;
  const ReplayFixture& fixture() const { return fixture_; }

 private:
  ReplayFixture fixture_;
  bool strict_;
  std::mutex mutex_;
  std::map<std::pair<std::string, std::size_t>, int> failures_served_;
};

// ------------------------------------------------------------------ live --

struct LiveProviderConfig {
  std::string endpoint;  // e.g. https://host/v1/chat/completions
  std::string credential_env;
  std::string model;
  int requests_per_minute = 0;
  std::optional<std::int64_t> max_context_tokens;
  int timeout_seconds = 120;
};

/// OpenAI-compatible chat-completions adapter over HTTP(S).
class LiveProvider : public ChatProvider {
 public:
  explicit LiveProvider(LiveProviderConfig config);
  ProviderReply complete(const ChatSession& session) override;
  std::optional<std::int64_t> max_context_tokens() const override {
    return config_.max_context_tokens;
  }

 private:
  LiveProviderConfig config_;
  RateLimiter limiter_;
};

// -------------------------------------------------------------- registry --

/// provider_id -> provider. Ids of the form "replay:<fixture>" resolve
/// against registered fixtures without further configuration.
class ProviderRegistry {
 public:
  void add(const std::string& provider_id, std::shared_ptr<ChatProvider> provider);
  void add_replay_fixture(ReplayFixture fixture, bool strict = false);

  /// Throws Error(kNotFound) for unknown ids.
  std::shared_ptr<ChatProvider> get(std::string_view provider_id) const;
  bool contains(std::string_view provider_id) const;
  std::vector<std::string> ids() const;

  RetryPolicy retry;
  SleepFn sleep;

  /// Provider config file: {"providers": {id: {kind, ...}}}. Relative script
  /// paths resolve against the config file's directory.
  static ProviderRegistry from_config_file(const std::filesystem::path& file);
  static ProviderRegistry from_config(const nlohmann::json& j, const std::filesystem::path& base);

 private:
  std::map<std::string, std::shared_ptr<ChatProvider>, std::less<>> providers_;
};

/// Throws Error(kNotFound) for an unknown provider and Error(kInvalidArgument)
/// for bad sampling parameters.
ChatSession open_session(const ProviderRegistry& registry, const std::string& provider_id,
                         const SamplingParams& params, std::string session_id = {},
                         std::string route = {});

void to_json(nlohmann::json& j, const ChatTurn& t);
void from_json(const nlohmann::json& j, ChatTurn& t);
void to_json(nlohmann::json& j, const SamplingParams& p);
void from_json(const nlohmann::json& j, SamplingParams& p);
void to_json(nlohmann::json& j, const ChatSession& s);
void from_json(const nlohmann::json& j, ChatSession& s);

}  // namespace cref
