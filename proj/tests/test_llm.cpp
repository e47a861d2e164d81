#include <doctest.h>

#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "cref/error.hpp"
#include "cref/llm.hpp"
#include "oracles.hpp"

using namespace cref;
using nlohmann::json;

namespace {

// Fails transiently a fixed number of times, then echoes the last user turn.
class FlakyProvider : public ChatProvider {
 public:
  explicit FlakyProvider(int failures) : failures_(failures) {}
  ProviderReply complete(const ChatSession& session) override {
    ++calls;
    if (failures_-- > 0) throw TransientProviderError("busy");
    return {"echo: " + session.turns.back().content, std::nullopt, std::nullopt};
  }
  int calls = 0;

 private:
  int failures_;
};

ReplayFixture fixture_from(const char* text) { return ReplayFixture::from_json(json::parse(text)); }

ChatSession session_with_route(const std::string& route) {
  ChatSession s;
  s.id = "sess";
  s.provider_id = "replay:x";
  s.route = route;
  return s;
}

int error_code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return static_cast<int>(e.code());
  }
  return -1;
}

}  // namespace

TEST_CASE("token estimate prefers reported usage") {
  CHECK(estimate_tokens("") == 0);
  CHECK(estimate_tokens("abcd") == 1);
  CHECK(estimate_tokens("abcde") == 2);
  CHECK(estimate_tokens("abcde", 40) == 40);
}

TEST_CASE("send appends one user and one assistant turn and keeps totals") {
  FlakyProvider p(0);
  ChatSession s;
  s.turns.push_back({Role::kSystem, "be terse", estimate_tokens("be terse"), false});
  recompute_totals(s);
  CHECK(send(s, p, "hello there") == "echo: hello there");
  REQUIRE(s.turns.size() == 3);
  CHECK(s.turns[1].role == Role::kUser);
  CHECK(s.turns[2].role == Role::kAssistant);
  CHECK(s.total_prompt_tokens == s.turns[0].token_count + s.turns[1].token_count);
  CHECK(s.total_completion_tokens == s.turns[2].token_count);
  CHECK(s.generated_turns() == 1);
  append_context_entry(s, "more context", "OK.");
  CHECK(s.turns.back().synthetic);
  CHECK(s.generated_turns() == 1);
  CHECK(s.total_completion_tokens == s.turns[2].token_count);
}

TEST_CASE("transient failures retry with exponential backoff") {
  FlakyProvider p(2);
  ChatSession s;
  std::vector<std::chrono::milliseconds> sleeps;
  RetryPolicy retry;
  retry.initial_delay = std::chrono::milliseconds(100);
  CHECK(send(s, p, "x", retry, [&](auto d) { sleeps.push_back(d); }) == "echo: x");
  CHECK(p.calls == 3);
  CHECK(sleeps == std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(100),
                                                         std::chrono::milliseconds(200)});
  CHECK(retry.delay_for(20) == retry.max_delay);
}

TEST_CASE("exhausted retries leave the session untouched") {
  FlakyProvider p(10);
  ChatSession s;
  s.turns.push_back({Role::kUser, "q", 1, false});
  s.turns.push_back({Role::kAssistant, "a", 1, false});
  recompute_totals(s);
  const ChatSession before = s;
  RetryPolicy retry;
  retry.max_attempts = 3;
  CHECK(error_code_of([&] { send(s, p, "again", retry, [](auto) {}); }) ==
        static_cast<int>(ErrorCode::kProviderUnavailable));
  CHECK(p.calls == 3);
  CHECK(s == before);
}

TEST_CASE("context limit is checked before sending") {
  ReplayFixture f = fixture_from(R"({"id":"x","max_context_tokens":10,"scripts":{"":["fine"]}})");
  ReplayProvider p(f);
  ChatSession s = session_with_route("a");
  CHECK(error_code_of([&] { send(s, p, std::string(100, 'x')); }) ==
        static_cast<int>(ErrorCode::kContextLength));
  CHECK(s.turns.empty());
  CHECK(send(s, p, "short") == "fine");
}

TEST_CASE("send refuses an unanswered user turn and empty content") {
  FlakyProvider p(0);
  ChatSession s;
  s.turns.push_back({Role::kUser, "pending", 2, false});
  CHECK(error_code_of([&] { send(s, p, "x"); }) == static_cast<int>(ErrorCode::kWrongState));
  ChatSession t;
  CHECK(error_code_of([&] { send(t, p, ""); }) == static_cast<int>(ErrorCode::kInvalidArgument));
}

TEST_CASE("replay routes fall back to shorter prefixes") {
  ReplayFixture f = fixture_from(R"({"id":"x","scripts":{
    "":["default"],
    "s1":["sub-wide"],
    "s1/cref/t2/s1":["exact-1","exact-2"]}})");
  ReplayProvider p(f);
  ChatSession a = session_with_route("s1/cref/t2/s1");
  CHECK(send(a, p, "q1") == "exact-1");
  CHECK(send(a, p, "q2") == "exact-2");
  CHECK(error_code_of([&] { send(a, p, "q3"); }) == static_cast<int>(ErrorCode::kProvider));
  ChatSession b = session_with_route("s1/baseline/t1/s1");
  CHECK(send(b, p, "q") == "sub-wide");
  ChatSession c = session_with_route("s9/baseline/t1/s1");
  CHECK(send(c, p, "q") == "default");
}

TEST_CASE("replay index ignores synthetic acknowledgements") {
  ReplayFixture f = fixture_from(R"({"id":"x","scripts":{"":["first","second"]}})");
  ReplayProvider p(f);
  ChatSession s = session_with_route("r");
  append_context_entry(s, "context", "OK.");
  append_context_entry(s, "info", "OK.");
  CHECK(send(s, p, "task") == "first");
}

TEST_CASE("scripted errors and fail_times") {
  ReplayFixture f = fixture_from(R"({"id":"x","scripts":{
    "flaky":[{"response":"recovered","error":"transient","fail_times":2}],
    "down":[{"error":"transient"}],
    "hard":[{"error":"hard"}],
    "long":[{"error":"context_length"}],
    "gone":[{"error":"unavailable"}]}})");
  ReplayProvider p(f);
  int sleeps = 0;
  ChatSession s = session_with_route("flaky");
  CHECK(send(s, p, "q", {}, [&](auto) { ++sleeps; }) == "recovered");
  CHECK(sleeps == 2);
  auto code_for = [&](const char* route) {
    ChatSession x = session_with_route(route);
    return error_code_of([&] { send(x, p, "q", {}, [](auto) {}); });
  };
  CHECK(code_for("down") == static_cast<int>(ErrorCode::kProviderUnavailable));
  CHECK(code_for("hard") == static_cast<int>(ErrorCode::kProvider));
  CHECK(code_for("long") == static_cast<int>(ErrorCode::kContextLength));
  CHECK(code_for("gone") == static_cast<int>(ErrorCode::kProviderUnavailable));
}

TEST_CASE("strict replay detects prompt drift") {
  const char* text = R"({"id":"x","scripts":{"":[{"response":"ok","prompt_prefix":"This is"}]}})";
  ReplayProvider strict(fixture_from(text), true);
  ReplayProvider lenient(fixture_from(text), false);
  ChatSession a = session_with_route("r");
  CHECK(error_code_of([&] { send(a, strict, "Something else"); }) ==
        static_cast<int>(ErrorCode::kProvider));
  CHECK(send(a, strict, "This is fine") == "ok");
  ChatSession b = session_with_route("r");
  CHECK(send(b, lenient, "Something else") == "ok");
}

TEST_CASE("registry resolves config files and replay ids") {
  ProviderRegistry r = ProviderRegistry::from_config_file(oracle::fixture("providers.json"));
  CHECK(r.contains("replay:bench"));
  CHECK(r.contains("replay:mute"));
  CHECK_FALSE(r.contains("replay:other"));
  CHECK(error_code_of([&] { r.get("nope"); }) == static_cast<int>(ErrorCode::kNotFound));
  r.add_replay_fixture(fixture_from(R"({"id":"other","scripts":{"":["hi"]}})"));
  CHECK(r.contains("replay:other"));
  SamplingParams bad;
  bad.temperature = -1;
  CHECK(error_code_of([&] { open_session(r, "replay:other", bad); }) ==
        static_cast<int>(ErrorCode::kInvalidArgument));
  ChatSession s = open_session(r, "replay:other", {}, "id1", "route");
  CHECK(s.provider_id == "replay:other");
  CHECK(s.route == "route");
}

TEST_CASE("session json round-trip") {
  ChatSession s = session_with_route("a/b");
  s.params.temperature = 0.5;
  s.turns.push_back({Role::kUser, "u", 1, false});
  s.turns.push_back({Role::kAssistant, "OK.", 1, true});
  recompute_totals(s);
  CHECK(json(s).get<ChatSession>() == s);
}

TEST_CASE("live provider speaks the chat-completions protocol") {
  httplib::Server server;
  json last_body;
  std::string last_auth;
  int calls = 0;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    last_body = json::parse(req.body);
    last_auth = req.get_header_value("Authorization");
    const std::string content = last_body["messages"].back()["content"];
    if (content == "overload" && calls == 1) {
      res.status = 429;
      return;
    }
    if (content == "too long") {
      res.status = 400;
      res.set_content(R"({"error":{"code":"context_length_exceeded"}})", "application/json");
      return;
    }
    if (content == "bad") {
      res.status = 401;
      return;
    }
    json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "pong"}}}}}},
                  {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 3}}}};
    res.set_content(reply.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  setenv("CREF_TEST_KEY", "sekret", 1);
  LiveProviderConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  cfg.credential_env = "CREF_TEST_KEY";
  cfg.model = "m-1";
  LiveProvider provider(cfg);

  ChatSession s;
  s.provider_id = "live";
  s.params.temperature = 0.7;
  CHECK(send(s, provider, "ping") == "pong");
  CHECK(last_auth == "Bearer sekret");
  CHECK(last_body["model"] == "m-1");
  CHECK(last_body["temperature"] == 0.7);
  CHECK(last_body["messages"].size() == 1);
  CHECK(s.turns[0].token_count == 12);
  CHECK(s.turns[1].token_count == 3);

  calls = 0;
  CHECK(send(s, provider, "overload", {}, [](auto) {}) == "pong");
  CHECK(calls == 2);
  CHECK(last_body["messages"].size() == 3);
  CHECK(error_code_of([&] { send(s, provider, "too long"); }) ==
        static_cast<int>(ErrorCode::kContextLength));
  CHECK(error_code_of([&] { send(s, provider, "bad"); }) == static_cast<int>(ErrorCode::kProvider));

  unsetenv("CREF_TEST_KEY");
  CHECK(error_code_of([&] { send(s, provider, "ping"); }) == static_cast<int>(ErrorCode::kProvider));

  server.stop();
  thread.join();
}
