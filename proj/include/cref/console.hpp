#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cref/corpus.hpp"
#include "cref/harness.hpp"
#include "cref/llm.hpp"
#include "cref/sandbox.hpp"
#include "cref/strategies.hpp"

namespace cref {

enum class LiveState { kAwaitingGuidance, kRunning, kSucceeded, kFailed, kApproved };

std::string_view to_string(LiveState state);
LiveState live_state_from_string(std::string_view name);

/// Transition table of the tutor session state machine.
bool transition_allowed(LiveState from, LiveState to);

struct SessionEvent {
  std::int64_t seq = 0;  // 1-based, gap-free per session
  std::string session_id;
  /// StageStarted | StageValidated | ExtractionFailed | Finished
  std::string kind;
  nlohmann::json payload;
  std::string at;
};

struct LiveSession {
  std::string id;
  std::string problem_id;
  std::string incorrect_code;
  LiveState state = LiveState::kAwaitingGuidance;
  /// Running: current stage; Succeeded: the validated stage.
  int stage = 0;
  std::optional<std::string> guidance;
  AttemptRecord attempt;
  std::optional<std::string> reply_draft;
  std::string error;
  std::string created_at;
  std::string updated_at;
  std::optional<std::string> guidance_at;
  std::optional<std::string> finished_at;
  std::optional<std::string> approved_at;
  std::vector<SessionEvent> events;
};

struct ConsoleConfig {
  std::string provider_id;
  SamplingParams params;
  /// Root of the shared results store; sessions live under `console/sessions/`.
  std::filesystem::path store_root;
  /// Concurrent CREF runs across all sessions.
  unsigned max_concurrent_runs = 2;
  /// Injected clock for timestamps; defaults to UTC wall time.
  std::function<std::string()> clock;
};

/// Tutor-facing repair sessions. Every mutation of one session is serialized
/// by that session's lock; CREF runs execute on a small worker pool.
class ConsoleService {
 public:
  ConsoleService(Corpus corpus, Sandbox& sandbox, ProviderRegistry& registry, ConsoleConfig config);
  ~ConsoleService();
  ConsoleService(const ConsoleService&) = delete;
  ConsoleService& operator=(const ConsoleService&) = delete;

  /// kNotFound for an unknown problem, kInvalidArgument for blank code.
  LiveSession create_session(const std::string& problem_id, const std::string& incorrect_code);
  /// kWrongState unless AwaitingGuidance, kInvalidArgument for blank text,
  /// kProviderUnavailable when the configured provider is missing.
  void submit_guidance(const std::string& session_id, const std::string& guidance);
  /// kWrongState unless Succeeded or Failed, kInvalidArgument for blank text.
  LiveSession approve(const std::string& session_id, const std::string& reply);

  LiveSession get(const std::string& session_id) const;
  /// Review payload: transcript, current code, unified diff, verdicts, tokens.
  nlohmann::json view(const std::string& session_id) const;
  std::vector<LiveSession> list() const;

  /// Events with seq >= from.
  std::vector<SessionEvent> events_since(const std::string& session_id, std::int64_t from) const;
  /// Blocks until an event with seq >= from exists or the timeout passes.
  /// Returns false on timeout.
  bool wait_for_event(const std::string& session_id, std::int64_t from,
                      std::chrono::milliseconds timeout) const;
  /// True once no further events can arrive (Finished already emitted).
  bool finished(const std::string& session_id) const;

  nlohmann::json problems() const;
  const Corpus& corpus() const { return corpus_; }

  /// Blocks until no CREF run is queued or running.
  void wait_idle();

 private:
  struct Slot {
    mutable std::mutex mutex;
    mutable std::condition_variable changed;
    LiveSession session;
  };

  std::shared_ptr<Slot> slot(const std::string& session_id) const;
  std::string now() const;
  void persist(const LiveSession& session);
  void load_existing();
  void emit(Slot& slot, const std::string& kind, nlohmann::json payload);
  void run_cref_for(const std::shared_ptr<Slot>& slot);
  void worker_loop();

  Corpus corpus_;
  Sandbox& sandbox_;
  ProviderRegistry& registry_;
  ConsoleConfig config_;
  std::unique_ptr<ResultsStore> store_;

  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::int64_t next_id_ = 1;

  std::mutex queue_mutex_;
  std::condition_variable queue_changed_;
  std::deque<std::shared_ptr<Slot>> queue_;
  std::size_t active_runs_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

void to_json(nlohmann::json& j, const SessionEvent& e);
void from_json(const nlohmann::json& j, SessionEvent& e);
void to_json(nlohmann::json& j, const LiveSession& s);
void from_json(const nlohmann::json& j, LiveSession& s);

/// JSON-over-HTTP front end for ConsoleService.
class ConsoleServer {
 public:
  explicit ConsoleServer(ConsoleService& service, std::filesystem::path static_dir = {});
  ~ConsoleServer();

  /// Binds; port 0 picks a free port. Returns the bound port or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cref
