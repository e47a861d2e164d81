#include "cref/llm.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <fmt/format.h>

#include "cref/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cref {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kSystem: return "system";
    case Role::kUser: return "user";
    case Role::kAssistant: return "assistant";
  }
  return "?";
}

Role role_from_string(std::string_view name) {
  if (name == "system") return Role::kSystem;
  if (name == "user") return Role::kUser;
  if (name == "assistant") return Role::kAssistant;
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown role '{}'", name));
}

void SamplingParams::validate() const {
  if (!(temperature >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "temperature must be >= 0");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "top_p must be in (0, 1]");
  }
  if (max_tokens <= 0) throw Error(ErrorCode::kInvalidArgument, "max_tokens must be positive");
}

std::size_t ChatSession::generated_turns() const {
  std::size_t n = 0;
  for (const auto& t : turns) {
    if (t.role == Role::kAssistant && !t.synthetic) ++n;
  }
  return n;
}

std::int64_t estimate_tokens(std::string_view text, std::optional<std::int64_t> reported) {
  if (reported) return *reported;
  return static_cast<std::int64_t>((text.size() + 3) / 4);
}

void recompute_totals(ChatSession& session) {
  session.total_prompt_tokens = 0;
  session.total_completion_tokens = 0;
  for (const auto& t : session.turns) {
    if (t.role == Role::kAssistant && !t.synthetic) {
      session.total_completion_tokens += t.token_count;
    } else {
      session.total_prompt_tokens += t.token_count;
    }
  }
}

std::chrono::milliseconds RetryPolicy::delay_for(int failed_attempts) const {
  double delay = static_cast<double>(initial_delay.count()) *
                 std::pow(multiplier, std::max(0, failed_attempts - 1));
  delay = std::min(delay, static_cast<double>(max_delay.count()));
  return std::chrono::milliseconds(static_cast<std::int64_t>(delay));
}

void RateLimiter::acquire() {
  if (per_minute_ <= 0) return;
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(mutex_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_);
    next_ = slot + std::chrono::microseconds(60'000'000 / per_minute_);
  }
  std::this_thread::sleep_until(slot);
}

namespace {

void check_can_send(const ChatSession& session, std::string_view user_content) {
  if (!session.turns.empty() && session.turns.back().role == Role::kUser) {
    throw Error(ErrorCode::kWrongState, "session has an unanswered user turn");
  }
  if (user_content.empty()) throw Error(ErrorCode::kInvalidArgument, "empty user content");
}

}  // namespace

std::string send(ChatSession& session, ChatProvider& provider, std::string_view user_content,
                 const RetryPolicy& retry, const SleepFn& sleep) {
  check_can_send(session, user_content);
  const std::int64_t prior = session.total_prompt_tokens + session.total_completion_tokens;
  const std::int64_t user_tokens = estimate_tokens(user_content);
  if (auto limit = provider.max_context_tokens(); limit && prior + user_tokens > *limit) {
    throw Error(ErrorCode::kContextLength,
                fmt::format("context length exceeded: {} + {} > {} tokens", prior, user_tokens,
                            *limit));
  }

  ChatSession candidate = session;
  candidate.turns.push_back({Role::kUser, std::string(user_content), user_tokens, false});

  ProviderReply reply;
  for (int attempt = 1;; ++attempt) {
    try {
      reply = provider.complete(candidate);
      break;
    } catch (const TransientProviderError& e) {
      if (attempt >= retry.max_attempts) {
        throw Error(ErrorCode::kProviderUnavailable,
                    fmt::format("provider '{}' failed after {} attempts: {}", session.provider_id,
                                attempt, e.what()));
      }
      const auto delay = retry.delay_for(attempt);
      if (sleep) {
        sleep(delay);
      } else {
        std::this_thread::sleep_for(delay);
      }
    }
  }
  if (reply.content.empty()) {
    throw Error(ErrorCode::kProvider, fmt::format("provider '{}' returned an empty response",
                                                  session.provider_id));
  }
  // Reported prompt usage covers the whole context; the new turn gets the delta.
  if (reply.prompt_tokens) {
    candidate.turns.back().token_count = std::max<std::int64_t>(0, *reply.prompt_tokens - prior);
  }
  candidate.turns.push_back({Role::kAssistant, reply.content,
                             estimate_tokens(reply.content, reply.completion_tokens), false});
  recompute_totals(candidate);
  session = std::move(candidate);
  return session.turns.back().content;
}

void append_context_entry(ChatSession& session, std::string_view user_content,
                          std::string_view acknowledgement) {
  check_can_send(session, user_content);
  session.turns.push_back({Role::kUser, std::string(user_content), estimate_tokens(user_content),
                           false});
  session.turns.push_back({Role::kAssistant, std::string(acknowledgement),
                           estimate_tokens(acknowledgement), true});
  recompute_totals(session);
}

// ---------------------------------------------------------------- replay --

const ReplayScript* ReplayFixture::lookup(std::string_view route) const {
  std::string key(route);
  for (;;) {
    if (auto it = scripts.find(key); it != scripts.end()) return &it->second;
    if (key.empty()) return nullptr;
    const auto slash = key.rfind('/');
    key = slash == std::string::npos ? std::string{} : key.substr(0, slash);
  }
}

namespace {

ReplayEntry parse_entry(const json& j, const json& snippets) {
  ReplayEntry e;
  if (j.is_string()) {
    e.response = j.get<std::string>();
    return e;
  }
  if (j.contains("snippet")) {
    const auto name = j.at("snippet").get<std::string>();
    if (!snippets.contains(name)) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown replay snippet '{}'", name));
    }
    e.response = snippets.at(name).get<std::string>();
  } else {
    e.response = j.value("response", "");
  }
  if (j.contains("prompt_prefix")) e.prompt_prefix = j.at("prompt_prefix").get<std::string>();
  if (j.contains("usage")) {
    const auto& usage = j.at("usage");
    if (usage.contains("prompt_tokens")) e.prompt_tokens = usage.at("prompt_tokens").get<std::int64_t>();
    if (usage.contains("completion_tokens")) {
      e.completion_tokens = usage.at("completion_tokens").get<std::int64_t>();
    }
  }
  e.error = j.value("error", "");
  e.fail_times = j.value("fail_times", 0);
  return e;
}

}  // namespace

ReplayFixture ReplayFixture::from_json(const json& j) {
  ReplayFixture f;
  f.id = j.at("id").get<std::string>();
  if (j.contains("max_context_tokens")) f.max_context_tokens = j.at("max_context_tokens").get<std::int64_t>();
  const json snippets = j.value("snippets", json::object());
  for (const auto& [route, entries] : j.at("scripts").items()) {
    ReplayScript script;
    for (const auto& entry : entries) script.entries.push_back(parse_entry(entry, snippets));
    f.scripts.emplace(route, std::move(script));
  }
  return f;
}

ReplayProvider::ReplayProvider(ReplayFixture fixture, bool strict)
    : fixture_(std::move(fixture)), strict_(strict) {}

std::optional<std::int64_t> ReplayProvider::max_context_tokens() const {
  return fixture_.max_context_tokens;
}

ProviderReply ReplayProvider::complete(const ChatSession& session) {
  const ReplayScript* script = fixture_.lookup(session.route);
  if (!script) {
    throw Error(ErrorCode::kProvider, fmt::format("replay fixture '{}' has no script for route '{}'",
                                                  fixture_.id, session.route));
  }
  const std::size_t index = session.generated_turns();
  if (index >= script->entries.size()) {
    throw Error(ErrorCode::kProvider,
                fmt::format("replay script '{}' for route '{}' exhausted at turn {}", fixture_.id,
                            session.route, index + 1));
  }
  const ReplayEntry& entry = script->entries[index];
  if (strict_ && entry.prompt_prefix) {
    const std::string& prompt = session.turns.back().content;
    if (prompt.compare(0, entry.prompt_prefix->size(), *entry.prompt_prefix) != 0) {
      throw Error(ErrorCode::kProvider,
                  fmt::format("replay prompt drift for '{}' turn {}", session.route, index + 1));
    }
  }
  if (!entry.error.empty()) {
    bool fail = entry.fail_times == 0;
    if (!fail) {
      std::lock_guard lock(mutex_);
      int& served = failures_served_[{session.id, index}];
      if (served < entry.fail_times) {
        ++served;
        fail = true;
      }
    }
    if (fail) {
      if (entry.error == "transient") throw TransientProviderError("scripted transient failure");
      if (entry.error == "context_length") {
        throw Error(ErrorCode::kContextLength, "scripted context length failure");
      }
      if (entry.error == "unavailable") {
        throw Error(ErrorCode::kProviderUnavailable, "scripted provider outage");
      }
      throw Error(ErrorCode::kProvider, "scripted provider failure");
    }
  }
  return {entry.response, entry.prompt_tokens, entry.completion_tokens};
}

// -------------------------------------------------------------- registry --

void ProviderRegistry::add(const std::string& provider_id, std::shared_ptr<ChatProvider> provider) {
  providers_[provider_id] = std::move(provider);
}

void ProviderRegistry::add_replay_fixture(ReplayFixture fixture, bool strict) {
  const std::string id = "replay:" + fixture.id;
  add(id, std::make_shared<ReplayProvider>(std::move(fixture), strict));
}

std::shared_ptr<ChatProvider> ProviderRegistry::get(std::string_view provider_id) const {
  auto it = providers_.find(provider_id);
  if (it == providers_.end()) {
    throw Error(ErrorCode::kNotFound, fmt::format("unknown provider '{}'", provider_id));
  }
  return it->second;
}

bool ProviderRegistry::contains(std::string_view provider_id) const {
  return providers_.find(provider_id) != providers_.end();
}

std::vector<std::string> ProviderRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : providers_) out.push_back(id);
  return out;
}

namespace {

json read_json_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::kNotFound, fmt::format("cannot open {}", file.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("{}: {}", file.string(), e.what()));
  }
}

}  // namespace

ProviderRegistry ProviderRegistry::from_config(const json& j, const fs::path& base) {
  ProviderRegistry registry;
  const json providers = j.value("providers", json::object());
  for (const auto& [id, entry] : providers.items()) {
    const std::string kind = entry.at("kind").get<std::string>();
    if (kind == "replay") {
      ReplayFixture fixture = ReplayFixture::from_json(read_json_file(base / entry.at("scripts").get<std::string>()));
      registry.add(id, std::make_shared<ReplayProvider>(std::move(fixture), entry.value("strict", false)));
    } else if (kind == "live") {
      LiveProviderConfig config;
      config.endpoint = entry.at("endpoint").get<std::string>();
      config.credential_env = entry.value("credential_env", "");
      config.model = entry.at("model").get<std::string>();
      config.requests_per_minute = entry.value("requests_per_minute", 0);
      if (entry.contains("max_context_tokens")) {
        config.max_context_tokens = entry.at("max_context_tokens").get<std::int64_t>();
      }
      config.timeout_seconds = entry.value("timeout_seconds", 120);
      registry.add(id, std::make_shared<LiveProvider>(std::move(config)));
    } else {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("provider '{}': unknown kind '{}'", id, kind));
    }
  }
  for (const auto& path : j.value("replay_fixtures", std::vector<std::string>{})) {
    registry.add_replay_fixture(ReplayFixture::from_json(read_json_file(base / path)));
  }
  if (j.contains("retry")) {
    const auto& r = j.at("retry");
    registry.retry.max_attempts = r.value("max_attempts", registry.retry.max_attempts);
    registry.retry.initial_delay = std::chrono::milliseconds(
        r.value("initial_delay_ms", static_cast<std::int64_t>(registry.retry.initial_delay.count())));
    registry.retry.max_delay = std::chrono::milliseconds(
        r.value("max_delay_ms", static_cast<std::int64_t>(registry.retry.max_delay.count())));
    registry.retry.multiplier = r.value("multiplier", registry.retry.multiplier);
  }
  return registry;
}

ProviderRegistry ProviderRegistry::from_config_file(const fs::path& file) {
  return from_config(read_json_file(file), file.parent_path());
}

ChatSession open_session(const ProviderRegistry& registry, const std::string& provider_id,
                         const SamplingParams& params, std::string session_id, std::string route) {
  params.validate();
  if (!registry.contains(provider_id)) {
    throw Error(ErrorCode::kNotFound, fmt::format("unknown provider '{}'", provider_id));
  }
  ChatSession session;
  session.id = session_id.empty() ? provider_id + "/" + route : std::move(session_id);
  session.provider_id = provider_id;
  session.route = std::move(route);
  session.params = params;
  return session;
}

// ------------------------------------------------------------------ json --

void to_json(json& j, const ChatTurn& t) {
  j = json{{"role", to_string(t.role)}, {"content", t.content}, {"token_count", t.token_count}};
  if (t.synthetic) j["synthetic"] = true;
}

void from_json(const json& j, ChatTurn& t) {
  t.role = role_from_string(j.at("role").get<std::string>());
  t.content = j.at("content").get<std::string>();
  t.token_count = j.value("token_count", std::int64_t{0});
  t.synthetic = j.value("synthetic", false);
}

void to_json(json& j, const SamplingParams& p) {
  j = json{{"temperature", p.temperature}, {"top_p", p.top_p}, {"max_tokens", p.max_tokens}};
}

void from_json(const json& j, SamplingParams& p) {
  SamplingParams defaults;
  p.temperature = j.value("temperature", defaults.temperature);
  p.top_p = j.value("top_p", defaults.top_p);
  p.max_tokens = j.value("max_tokens", defaults.max_tokens);
}

void to_json(json& j, const ChatSession& s) {
  j = json{{"id", s.id},
           {"provider_id", s.provider_id},
           {"route", s.route},
           {"params", s.params},
           {"turns", s.turns},
           {"total_prompt_tokens", s.total_prompt_tokens},
           {"total_completion_tokens", s.total_completion_tokens}};
}

void from_json(const json& j, ChatSession& s) {
  s.id = j.at("id").get<std::string>();
  s.provider_id = j.at("provider_id").get<std::string>();
  s.route = j.value("route", "");
  s.params = j.value("params", SamplingParams{});
  s.turns = j.at("turns").get<std::vector<ChatTurn>>();
  recompute_totals(s);
}

}  // namespace cref
