#include <doctest.h>

#include <fstream>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "cref/console.hpp"
#include "cref/error.hpp"
#include "replay_support.hpp"

using namespace cref;
using nlohmann::json;
using replay_support::fenced;
using replay_support::Script;
using replay_support::submission;

namespace {

constexpr LiveState kStates[] = {LiveState::kAwaitingGuidance, LiveState::kRunning,
                                 LiveState::kSucceeded, LiveState::kFailed, LiveState::kApproved};

int code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return static_cast<int>(e.code());
  }
  return -1;
}

/// Stage 1 yields no code, stage 2 the p1 ground truth.
Script two_step_script() {
  return Script{}.route("", {"Let me think.", fenced(submission("s101").corrected_code)});
}

struct Fixture {
  explicit Fixture(std::filesystem::path store = {}, std::string provider = "replay:t") {
    registry.add_replay_fixture(two_step_script().build());
    registry.sleep = [](std::chrono::milliseconds) {};
    ConsoleConfig cfg;
    cfg.provider_id = std::move(provider);
    cfg.store_root = std::move(store);
    int tick = 0;
    cfg.clock = [tick]() mutable { return fmt::format("2026-01-01T00:00:{:02}Z", (tick++) % 60); };
    service = std::make_unique<ConsoleService>(replay_support::corpus(), replay_support::sandbox(),
                                               registry, cfg);
  }
  ProviderRegistry registry;
  std::unique_ptr<ConsoleService> service;
};

void check_event_log(const LiveSession& s) {
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    CHECK(s.events[i].seq == static_cast<std::int64_t>(i + 1));
    CHECK(s.events[i].session_id == s.id);
  }
  const bool terminal = s.state == LiveState::kSucceeded || s.state == LiveState::kFailed ||
                        (s.state == LiveState::kApproved && s.guidance.has_value());
  CHECK(terminal == (!s.events.empty() && s.events.back().kind == "Finished"));
  int finished = 0;
  for (const auto& e : s.events) finished += e.kind == "Finished";
  CHECK(finished <= 1);
}

}  // namespace

TEST_CASE("transition table") {
  std::set<std::pair<LiveState, LiveState>> allowed;
  for (LiveState a : kStates) {
    for (LiveState b : kStates) {
      if (transition_allowed(a, b)) allowed.insert({a, b});
    }
    CHECK(live_state_from_string(to_string(a)) == a);
  }
  CHECK(allowed == std::set<std::pair<LiveState, LiveState>>{
                       {LiveState::kAwaitingGuidance, LiveState::kRunning},
                       {LiveState::kRunning, LiveState::kRunning},
                       {LiveState::kRunning, LiveState::kSucceeded},
                       {LiveState::kRunning, LiveState::kFailed},
                       {LiveState::kSucceeded, LiveState::kApproved},
                       {LiveState::kFailed, LiveState::kApproved}});
}

TEST_CASE("a guided session runs CREF and reports each stage") {
  Fixture f;
  ConsoleService& svc = *f.service;
  const LiveSession created = svc.create_session("p1", submission("s101").incorrect_code);
  CHECK(created.state == LiveState::kAwaitingGuidance);
  CHECK(created.id == "live-0001");
  svc.submit_guidance(created.id, "Check the operator.");
  svc.wait_idle();
  const LiveSession done = svc.get(created.id);
  CHECK(done.state == LiveState::kSucceeded);
  CHECK(done.stage == 2);
  std::vector<std::string> kinds;
  for (const auto& e : done.events) kinds.push_back(e.kind);
  CHECK(kinds == std::vector<std::string>{"StageStarted", "ExtractionFailed", "StageStarted",
                                          "StageValidated", "Finished"});
  CHECK(done.events[3].payload["passed"] == true);
  CHECK(done.events[4].payload["succeeded_stage"] == 2);
  check_event_log(done);
  CHECK(svc.finished(created.id));
  CHECK(svc.events_since(created.id, 4).size() == 2);
  CHECK(svc.events_since(created.id, 99).empty());
  CHECK(svc.wait_for_event(created.id, 5, std::chrono::milliseconds(1)));
  CHECK_FALSE(svc.wait_for_event(created.id, 6, std::chrono::milliseconds(20)));

  const json v = svc.view(created.id);
  CHECK(v["state"] == "Succeeded");
  CHECK(v["repaired_code"].get<std::string>() + "\n" == submission("s101").corrected_code);
  CHECK(v["diff"].get<std::string>().find("-        cout << a - b << \"\\n\";\n+        cout << a + b") != std::string::npos);
  CHECK(v["diff_stats"]["removed"] == 1);
  CHECK(v["diff_stats"]["added"] == 1);
  CHECK(v["verdicts"].size() == 3);
  CHECK(v["stages"].size() == 2);
  CHECK(v["transcript"].size() == 4);
  // The tutor guidance is the first prompt of the conversation.
  CHECK(v["stages"][0]["prompt"][0].get<std::string>().find("Check the operator.") != std::string::npos);

  const LiveSession approved = svc.approve(created.id, "Look at the sign of the sum.");
  CHECK(approved.state == LiveState::kApproved);
  CHECK(approved.reply_draft == "Look at the sign of the sum.");
  CHECK(code_of([&] { svc.approve(created.id, "again"); }) == static_cast<int>(ErrorCode::kWrongState));
}

TEST_CASE("request validation") {
  Fixture f;
  ConsoleService& svc = *f.service;
  CHECK(code_of([&] { svc.create_session("nope", "int main(){}"); }) ==
        static_cast<int>(ErrorCode::kNotFound));
  CHECK(code_of([&] { svc.create_session("p1", " \n"); }) ==
        static_cast<int>(ErrorCode::kInvalidArgument));
  const std::string id = svc.create_session("p1", "int main(){}").id;
  CHECK(code_of([&] { svc.submit_guidance(id, ""); }) == static_cast<int>(ErrorCode::kInvalidArgument));
  CHECK(code_of([&] { svc.approve(id, "reply"); }) == static_cast<int>(ErrorCode::kWrongState));
  CHECK(code_of([&] { svc.get("live-9999"); }) == static_cast<int>(ErrorCode::kNotFound));
  CHECK(svc.get(id).state == LiveState::kAwaitingGuidance);

  Fixture unconfigured({}, "replay:missing");
  const std::string other = unconfigured.service->create_session("p1", "int main(){}").id;
  CHECK(code_of([&] { unconfigured.service->submit_guidance(other, "hint"); }) ==
        static_cast<int>(ErrorCode::kProviderUnavailable));
  CHECK(unconfigured.service->get(other).state == LiveState::kAwaitingGuidance);
}

TEST_CASE("random operation sequences respect the state machine") {
  Fixture f;
  ConsoleService& svc = *f.service;
  std::mt19937 rng(11);
  std::vector<std::string> ids;
  std::map<std::string, std::vector<LiveState>> history;
  for (int step = 0; step < 120; ++step) {
    svc.wait_idle();
    const int op = static_cast<int>(rng() % 4);
    if (op == 0 || ids.empty()) {
      const char* problem = rng() % 2 ? "p1" : "p3";
      ids.push_back(svc.create_session(problem, submission("s101").incorrect_code).id);
      history[ids.back()].push_back(LiveState::kAwaitingGuidance);
      continue;
    }
    const std::string& id = ids[rng() % ids.size()];
    const LiveState before = svc.get(id).state;
    const bool blank = rng() % 5 == 0;
    const std::string text = blank ? "  " : "text";
    if (op == 1) {
      const int code = code_of([&] { svc.submit_guidance(id, text); });
      if (!transition_allowed(before, LiveState::kRunning)) {
        CHECK(code == static_cast<int>(ErrorCode::kWrongState));
      } else if (blank) {
        CHECK(code == static_cast<int>(ErrorCode::kInvalidArgument));
      } else {
        CHECK(code == -1);
      }
    } else if (op == 2) {
      const int code = code_of([&] { svc.approve(id, text); });
      if (!transition_allowed(before, LiveState::kApproved)) {
        CHECK(code == static_cast<int>(ErrorCode::kWrongState));
      } else if (blank) {
        CHECK(code == static_cast<int>(ErrorCode::kInvalidArgument));
      } else {
        CHECK(code == -1);
      }
    }
    svc.wait_idle();
    const LiveState after = svc.get(id).state;
    if (after != history[id].back()) history[id].push_back(after);
  }
  svc.wait_idle();
  for (const std::string& id : ids) {
    const LiveSession s = svc.get(id);
    check_event_log(s);
    // Running is transient between operations, so a guided step shows up as
    // AwaitingGuidance -> Succeeded/Failed.
    const auto& h = history[id];
    for (std::size_t i = 1; i < h.size(); ++i) {
      const bool via_run = h[i - 1] == LiveState::kAwaitingGuidance &&
                           transition_allowed(LiveState::kRunning, h[i]);
      CHECK((transition_allowed(h[i - 1], h[i]) || via_run));
    }
    if (s.problem_id == "p3" && s.guidance) {
      CHECK((s.state == LiveState::kFailed || s.state == LiveState::kApproved));
    }
  }
}

TEST_CASE("sessions persist and an interrupted run is marked failed on reload") {
  oracle::TempDir tmp;
  std::string done_id;
  {
    Fixture f(tmp.path);
    done_id = f.service->create_session("p1", submission("s101").incorrect_code).id;
    f.service->submit_guidance(done_id, "hint");
    f.service->wait_idle();
    f.service->create_session("p2", submission("s201").incorrect_code);
  }
  const auto dir = tmp.path / "console" / "sessions";
  REQUIRE(std::filesystem::exists(dir / "live-0001.json"));
  // A session that was mid-run when the process died.
  json stuck = json::parse(oracle::read_file(dir / "live-0002.json"));
  stuck["state"] = "Running";
  stuck["guidance"] = "hint";
  stuck["id"] = "live-0007";
  std::ofstream(dir / "live-0007.json") << stuck.dump();

  Fixture again(tmp.path);
  ConsoleService& svc = *again.service;
  CHECK(svc.list().size() == 3);
  const LiveSession restored = svc.get(done_id);
  CHECK(restored.state == LiveState::kSucceeded);
  CHECK(restored.events.size() == 5);
  const LiveSession failed = svc.get("live-0007");
  CHECK(failed.state == LiveState::kFailed);
  CHECK(failed.events.back().kind == "Finished");
  CHECK(svc.create_session("p1", "int main(){}").id == "live-0008");
  CHECK(svc.get("live-0002").state == LiveState::kAwaitingGuidance);
}

TEST_CASE("http contract") {
  Fixture f;
  ConsoleServer server(*f.service);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread thread([&] { server.serve(); });
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(10, 0);

  auto problems = cli.Get("/problems");
  REQUIRE(problems);
  CHECK(problems->status == 200);
  CHECK(json::parse(problems->body).size() == 3);
  CHECK(problems->get_header_value("Access-Control-Allow-Origin") == "*");

  auto bad = cli.Post("/sessions", "{not json", "application/json");
  CHECK(bad->status == 400);
  CHECK(json::parse(bad->body)["code"] == "invalid_argument");
  auto missing = cli.Post("/sessions", json{{"problem_id", "zz"}, {"incorrect_code", "x"}}.dump(),
                          "application/json");
  CHECK(missing->status == 404);
  CHECK(cli.Get("/sessions/live-4242")->status == 404);

  auto created = cli.Post(
      "/sessions", json{{"problem_id", "p1"}, {"incorrect_code", submission("s101").incorrect_code}}.dump(),
      "application/json");
  REQUIRE(created->status == 201);
  const std::string id = json::parse(created->body)["id"];
  CHECK(json::parse(created->body)["state"] == "AwaitingGuidance");
  CHECK(cli.Post("/sessions/" + id + "/approve", R"({"reply":"x"})", "application/json")->status == 409);

  auto guided = cli.Post("/sessions/" + id + "/guidance", R"({"guidance":"Check the operator."})",
                         "application/json");
  CHECK(guided->status == 202);

  // Server-sent events until Finished.
  std::string stream;
  auto sse = cli.Get("/sessions/" + id + "/events", {{"Accept", "text/event-stream"}},
                     [&](const char* data, std::size_t n) {
                       stream.append(data, n);
                       return true;
                     });
  REQUIRE(sse);
  CHECK(sse->get_header_value("Content-Type").find("text/event-stream") != std::string::npos);
  CHECK(stream.find("id: 1\nevent: StageStarted\n") == 0);
  CHECK(stream.find("event: Finished") != std::string::npos);

  auto polled = cli.Get("/sessions/" + id + "/events?from=4");
  const json page = json::parse(polled->body);
  CHECK(page["events"].size() == 2);
  CHECK(page["next"] == 6);
  CHECK(page["finished"] == true);
  CHECK(cli.Get("/sessions/" + id + "/events?from=abc")->status == 400);

  auto view = json::parse(cli.Get("/sessions/" + id)->body);
  CHECK(view["state"] == "Succeeded");
  CHECK(view["last_event_seq"] == 5);
  auto approved = cli.Post("/sessions/" + id + "/approve", R"({"reply":"Look at the sign."})",
                           "application/json");
  CHECK(approved->status == 200);
  CHECK(json::parse(approved->body)["state"] == "Approved");
  auto list = json::parse(cli.Get("/sessions")->body);
  REQUIRE(list.size() == 1);
  CHECK(list[0]["state"] == "Approved");
  CHECK(cli.Options("/sessions")->status == 204);

  server.stop();
  thread.join();
}
