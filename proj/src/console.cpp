#include "cref/console.hpp"

#include <time.h>

#include <algorithm>
#include <cctype>
#include <fstream>

#include <fmt/format.h>

#include "cref/diff.hpp"
#include "cref/error.hpp"

namespace cref {

namespace fs = std::filesystem;

namespace {

constexpr const char* kStoreRun = "console";

// Extracted code never ends in a newline; compare whole lines with the submission.
std::string with_final_newline(const std::string& code) {
  return code.empty() || code.back() == '\n' ? code : code + '\n';
}

bool blank(std::string_view text) {
  return std::all_of(text.begin(), text.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z", tm.tm_year + 1900, tm.tm_mon + 1,
                     tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, ms);
}

const std::string* latest_code(const AttemptRecord& attempt) {
  for (auto it = attempt.stages.rbegin(); it != attempt.stages.rend(); ++it) {
    if (it->extracted_code) return &*it->extracted_code;
  }
  return nullptr;
}

const RunReport* latest_report(const AttemptRecord& attempt) {
  for (auto it = attempt.stages.rbegin(); it != attempt.stages.rend(); ++it) {
    if (it->run_report) return &*it->run_report;
  }
  return nullptr;
}

}  // namespace

std::string_view to_string(LiveState state) {
  switch (state) {
    case LiveState::kAwaitingGuidance: return "AwaitingGuidance";
    case LiveState::kRunning: return "Running";
    case LiveState::kSucceeded: return "Succeeded";
    case LiveState::kFailed: return "Failed";
    case LiveState::kApproved: return "Approved";
  }
  return "?";
}

LiveState live_state_from_string(std::string_view name) {
  for (LiveState s : {LiveState::kAwaitingGuidance, LiveState::kRunning, LiveState::kSucceeded,
                      LiveState::kFailed, LiveState::kApproved}) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown session state '{}'", name));
}

bool transition_allowed(LiveState from, LiveState to) {
  switch (from) {
    case LiveState::kAwaitingGuidance: return to == LiveState::kRunning;
    case LiveState::kRunning:
      return to == LiveState::kRunning || to == LiveState::kSucceeded || to == LiveState::kFailed;
    case LiveState::kSucceeded:
    case LiveState::kFailed: return to == LiveState::kApproved;
    case LiveState::kApproved: return false;
  }
  return false;
}

// ------------------------------------------------------------------ json --

void to_json(nlohmann::json& j, const SessionEvent& e) {
  j = {{"seq", e.seq},
       {"session_id", e.session_id},
       {"kind", e.kind},
       {"payload", e.payload},
       {"at", e.at}};
}

void from_json(const nlohmann::json& j, SessionEvent& e) {
  e.seq = j.at("seq").get<std::int64_t>();
  e.session_id = j.at("session_id").get<std::string>();
  e.kind = j.at("kind").get<std::string>();
  e.payload = j.value("payload", nlohmann::json::object());
  e.at = j.value("at", "");
}

namespace {

nlohmann::json opt(const std::optional<std::string>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json();
}

std::optional<std::string> opt_string(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

}  // namespace

void to_json(nlohmann::json& j, const LiveSession& s) {
  j = {{"id", s.id},
       {"problem_id", s.problem_id},
       {"incorrect_code", s.incorrect_code},
       {"state", std::string(to_string(s.state))},
       {"stage", s.stage},
       {"guidance", opt(s.guidance)},
       {"attempt", s.attempt},
       {"reply_draft", opt(s.reply_draft)},
       {"error", s.error},
       {"created_at", s.created_at},
       {"updated_at", s.updated_at},
       {"guidance_at", opt(s.guidance_at)},
       {"finished_at", opt(s.finished_at)},
       {"approved_at", opt(s.approved_at)},
       {"events", s.events}};
}

void from_json(const nlohmann::json& j, LiveSession& s) {
  s.id = j.at("id").get<std::string>();
  s.problem_id = j.at("problem_id").get<std::string>();
  s.incorrect_code = j.at("incorrect_code").get<std::string>();
  s.state = live_state_from_string(j.at("state").get<std::string>());
  s.stage = j.value("stage", 0);
  s.guidance = opt_string(j, "guidance");
  s.attempt = j.at("attempt").get<AttemptRecord>();
  s.reply_draft = opt_string(j, "reply_draft");
  s.error = j.value("error", "");
  s.created_at = j.value("created_at", "");
  s.updated_at = j.value("updated_at", "");
  s.guidance_at = opt_string(j, "guidance_at");
  s.finished_at = opt_string(j, "finished_at");
  s.approved_at = opt_string(j, "approved_at");
  s.events = j.value("events", std::vector<SessionEvent>{});
}

// --------------------------------------------------------------- service --

ConsoleService::ConsoleService(Corpus corpus, Sandbox& sandbox, ProviderRegistry& registry,
                               ConsoleConfig config)
    : corpus_(std::move(corpus)), sandbox_(sandbox), registry_(registry), config_(std::move(config)) {
  if (!config_.store_root.empty()) {
    store_ = std::make_unique<ResultsStore>(config_.store_root);
    load_existing();
  }
  const unsigned workers = std::max(1u, config_.max_concurrent_runs);
  for (unsigned i = 0; i < workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

ConsoleService::~ConsoleService() {
  {
    std::lock_guard lock(queue_mutex_);
    stopping_ = true;
  }
  queue_changed_.notify_all();
  for (std::thread& t : workers_) t.join();
}

std::string ConsoleService::now() const { return config_.clock ? config_.clock() : utc_now(); }

std::shared_ptr<ConsoleService::Slot> ConsoleService::slot(const std::string& session_id) const {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) {
    throw Error(ErrorCode::kNotFound, fmt::format("unknown session '{}'", session_id));
  }
  return it->second;
}

void ConsoleService::persist(const LiveSession& session) {
  if (!store_) return;
  store_->write_json(kStoreRun, fmt::format("sessions/{}.json", session.id), session);
}

void ConsoleService::load_existing() {
  const fs::path dir = store_->run_dir(kStoreRun) / "sessions";
  if (!fs::exists(dir)) return;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& file : files) {
    std::ifstream in(file);
    LiveSession session = nlohmann::json::parse(in).get<LiveSession>();
    auto s = std::make_shared<Slot>();
    s->session = std::move(session);
    if (s->session.state == LiveState::kRunning) {
      // The run died with the previous process.
      s->session.state = LiveState::kFailed;
      s->session.error = "interrupted by service restart";
      s->session.finished_at = now();
      emit(*s, "Finished", {{"success", false}, {"error", s->session.error}});
      persist(s->session);
    }
    const std::string& id = s->session.id;
    if (id.rfind("live-", 0) == 0) {
      next_id_ = std::max<std::int64_t>(next_id_, std::stoll(id.substr(5)) + 1);
    }
    sessions_[id] = std::move(s);
  }
}

void ConsoleService::emit(Slot& slot, const std::string& kind, nlohmann::json payload) {
  SessionEvent e;
  e.seq = static_cast<std::int64_t>(slot.session.events.size()) + 1;
  e.session_id = slot.session.id;
  e.kind = kind;
  e.payload = std::move(payload);
  e.at = now();
  slot.session.events.push_back(std::move(e));
  slot.session.updated_at = slot.session.events.back().at;
  slot.changed.notify_all();
}

LiveSession ConsoleService::create_session(const std::string& problem_id,
                                           const std::string& incorrect_code) {
  if (!corpus_.find_problem(problem_id)) {
    throw Error(ErrorCode::kNotFound, fmt::format("unknown problem '{}'", problem_id));
  }
  if (blank(incorrect_code)) throw Error(ErrorCode::kInvalidArgument, "incorrect code is empty");
  auto s = std::make_shared<Slot>();
  {
    std::lock_guard lock(sessions_mutex_);
    s->session.id = fmt::format("live-{:04}", next_id_++);
    s->session.problem_id = problem_id;
    s->session.incorrect_code = incorrect_code;
    s->session.created_at = now();
    s->session.updated_at = s->session.created_at;
    s->session.attempt.submission_id = s->session.id;
    s->session.attempt.provider_id = config_.provider_id;
    s->session.attempt.strategy = StrategyKind::cref();
    sessions_[s->session.id] = s;
  }
  std::lock_guard lock(s->mutex);
  persist(s->session);
  return s->session;
}

void ConsoleService::submit_guidance(const std::string& session_id, const std::string& guidance) {
  auto s = slot(session_id);
  {
    std::lock_guard lock(s->mutex);
    if (s->session.state != LiveState::kAwaitingGuidance) {
      throw Error(ErrorCode::kWrongState,
                  fmt::format("session is {}, guidance needs AwaitingGuidance",
                              to_string(s->session.state)));
    }
    if (blank(guidance)) throw Error(ErrorCode::kInvalidArgument, "guidance is empty");
    if (!registry_.contains(config_.provider_id)) {
      throw Error(ErrorCode::kProviderUnavailable,
                  fmt::format("provider '{}' is not configured", config_.provider_id));
    }
    s->session.guidance = guidance;
    s->session.guidance_at = now();
    s->session.state = LiveState::kRunning;
    s->session.stage = 1;
    s->session.updated_at = *s->session.guidance_at;
    persist(s->session);
  }
  {
    std::lock_guard lock(queue_mutex_);
    queue_.push_back(s);
  }
  queue_changed_.notify_one();
}

LiveSession ConsoleService::approve(const std::string& session_id, const std::string& reply) {
  auto s = slot(session_id);
  std::lock_guard lock(s->mutex);
  if (!transition_allowed(s->session.state, LiveState::kApproved)) {
    throw Error(ErrorCode::kWrongState,
                fmt::format("session is {}, approval needs Succeeded or Failed",
                            to_string(s->session.state)));
  }
  if (blank(reply)) throw Error(ErrorCode::kInvalidArgument, "reply is empty");
  s->session.reply_draft = reply;
  s->session.state = LiveState::kApproved;
  s->session.approved_at = now();
  s->session.updated_at = *s->session.approved_at;
  persist(s->session);
  s->changed.notify_all();
  return s->session;
}

LiveSession ConsoleService::get(const std::string& session_id) const {
  auto s = slot(session_id);
  std::lock_guard lock(s->mutex);
  return s->session;
}

std::vector<LiveSession> ConsoleService::list() const {
  std::vector<std::shared_ptr<Slot>> slots;
  {
    std::lock_guard lock(sessions_mutex_);
    for (const auto& [id, s] : sessions_) slots.push_back(s);
  }
  std::vector<LiveSession> out;
  for (const auto& s : slots) {
    std::lock_guard lock(s->mutex);
    out.push_back(s->session);
  }
  return out;
}

nlohmann::json ConsoleService::view(const std::string& session_id) const {
  const LiveSession s = get(session_id);
  const AttemptRecord& a = s.attempt;
  const std::string* current = latest_code(a);
  const std::string* repaired = a.repaired_code();
  const std::string* shown = repaired ? repaired : current;

  nlohmann::json verdicts = nlohmann::json::array();
  if (const RunReport* report = latest_report(a)) {
    for (const TestOutcome& t : report->per_test) {
      verdicts.push_back({{"index", t.index},
                          {"verdict", std::string(to_string(t.verdict))},
                          {"wall_time_ms", t.wall_time_ms}});
    }
  }
  nlohmann::json stages = nlohmann::json::array();
  for (const StageRecord& st : a.stages) {
    stages.push_back({{"stage", st.stage_index},
                      {"passed", st.passed},
                      {"error", st.error},
                      {"verdict", st.run_report ? nlohmann::json(std::string(to_string(
                                                      st.run_report->summary_verdict())))
                                                : nlohmann::json()},
                      {"failing_cases", st.run_report ? nlohmann::json(st.run_report->failing_cases)
                                                      : nlohmann::json::array()},
                      {"prompt", st.prompt_entries},
                      {"response", st.response},
                      {"extracted_code", st.extracted_code ? nlohmann::json(*st.extracted_code)
                                                           : nlohmann::json()}});
  }
  nlohmann::json transcript = nlohmann::json::array();
  for (const ChatSession& cs : a.sessions) {
    for (const ChatTurn& t : cs.turns) transcript.push_back(t);
  }
  nlohmann::json diff;
  nlohmann::json stats;
  if (shown) {
    const std::string after = with_final_newline(*shown);
    diff = unified_diff(s.incorrect_code, after, "incorrect.cpp", "repaired.cpp");
    const DiffStats ds = diff_stats(s.incorrect_code, after);
    stats = {{"added", ds.added}, {"removed", ds.removed}};
  }
  return {{"id", s.id},
          {"problem_id", s.problem_id},
          {"state", std::string(to_string(s.state))},
          {"stage", s.stage == 0 ? nlohmann::json() : nlohmann::json(s.stage)},
          {"guidance", opt(s.guidance)},
          {"incorrect_code", s.incorrect_code},
          {"current_code", current ? nlohmann::json(*current) : nlohmann::json()},
          {"repaired_code", repaired ? nlohmann::json(*repaired) : nlohmann::json()},
          {"diff", diff},
          {"diff_stats", stats},
          {"verdicts", verdicts},
          {"stages", stages},
          {"transcript", transcript},
          {"tokens", {{"prompt", a.prompt_tokens}, {"completion", a.completion_tokens}}},
          {"reply", opt(s.reply_draft)},
          {"error", s.error},
          {"created_at", s.created_at},
          {"updated_at", s.updated_at},
          {"guidance_at", opt(s.guidance_at)},
          {"finished_at", opt(s.finished_at)},
          {"approved_at", opt(s.approved_at)},
          {"last_event_seq", static_cast<std::int64_t>(s.events.size())}};
}

std::vector<SessionEvent> ConsoleService::events_since(const std::string& session_id,
                                                       std::int64_t from) const {
  auto s = slot(session_id);
  std::lock_guard lock(s->mutex);
  const auto& events = s->session.events;
  const std::size_t start = static_cast<std::size_t>(std::max<std::int64_t>(from, 1) - 1);
  if (start >= events.size()) return {};
  return {events.begin() + static_cast<std::ptrdiff_t>(start), events.end()};
}

bool ConsoleService::wait_for_event(const std::string& session_id, std::int64_t from,
                                    std::chrono::milliseconds timeout) const {
  auto s = slot(session_id);
  std::unique_lock lock(s->mutex);
  return s->changed.wait_for(lock, timeout, [&] {
    return static_cast<std::int64_t>(s->session.events.size()) >= std::max<std::int64_t>(from, 1);
  });
}

bool ConsoleService::finished(const std::string& session_id) const {
  auto s = slot(session_id);
  std::lock_guard lock(s->mutex);
  return !s->session.events.empty() && s->session.events.back().kind == "Finished";
}

nlohmann::json ConsoleService::problems() const {
  nlohmann::json out = nlohmann::json::array();
  for (const Problem& p : corpus_.problems()) {
    out.push_back({{"id", p.id},
                   {"title", p.title},
                   {"tier", p.tier},
                   {"category", p.category},
                   {"time_limit_ms", p.time_limit_ms},
                   {"memory_limit_kb", p.memory_limit_kb},
                   {"test_count", p.test_cases.size()}});
  }
  return out;
}

void ConsoleService::wait_idle() {
  std::unique_lock lock(queue_mutex_);
  queue_changed_.wait(lock, [&] { return queue_.empty() && active_runs_ == 0; });
}

void ConsoleService::worker_loop() {
  for (;;) {
    std::shared_ptr<Slot> next;
    {
      std::unique_lock lock(queue_mutex_);
      queue_changed_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;  // stopping
      next = queue_.front();
      queue_.pop_front();
      ++active_runs_;
    }
    run_cref_for(next);
    {
      std::lock_guard lock(queue_mutex_);
      --active_runs_;
    }
    queue_changed_.notify_all();
  }
}

namespace {

class EventBridge : public AttemptObserver {
 public:
  using Hook = std::function<void(const AttemptRecord&, int, const StageRecord*)>;
  explicit EventBridge(Hook hook) : hook_(std::move(hook)) {}
  void on_stage_started(const AttemptRecord& attempt, int stage) override {
    hook_(attempt, stage, nullptr);
  }
  void on_stage_finished(const AttemptRecord& attempt, const StageRecord& stage) override {
    hook_(attempt, stage.stage_index, &stage);
  }

 private:
  Hook hook_;
};

}  // namespace

void ConsoleService::run_cref_for(const std::shared_ptr<Slot>& s) {
  Submission submission;
  const Problem* problem = nullptr;
  {
    std::lock_guard lock(s->mutex);
    submission.id = s->session.id;
    submission.problem_id = s->session.problem_id;
    submission.incorrect_code = s->session.incorrect_code;
    submission.tutor_guidance = s->session.guidance.value_or("");
    problem = corpus_.find_problem(s->session.problem_id);
  }

  EventBridge bridge([&](const AttemptRecord& attempt, int stage, const StageRecord* done) {
    std::lock_guard lock(s->mutex);
    s->session.attempt = attempt;
    s->session.stage = stage;
    if (!done) {
      emit(*s, "StageStarted", {{"stage", stage}});
    } else if (done->error == "extraction_failed") {
      emit(*s, "ExtractionFailed", {{"stage", stage}});
    } else {
      nlohmann::json payload = {{"stage", stage}, {"passed", done->passed}, {"error", done->error}};
      if (done->run_report) {
        payload["verdict"] = std::string(to_string(done->run_report->summary_verdict()));
        payload["failing_cases"] = done->run_report->failing_cases;
      }
      if (done->extracted_code) {
        const DiffStats ds = diff_stats(s->session.incorrect_code,
                                          with_final_newline(*done->extracted_code));
        payload["diff_stats"] = {{"added", ds.added}, {"removed", ds.removed}};
      }
      emit(*s, "StageValidated", std::move(payload));
    }
    persist(s->session);
  });

  StrategyContext ctx;
  ctx.sandbox = &sandbox_;
  ctx.registry = &registry_;
  ctx.provider_id = config_.provider_id;
  ctx.params = config_.params;
  ctx.observer = &bridge;

  std::optional<AttemptRecord> result;
  std::string error;
  try {
    result = run_attempt(ctx, *problem, submission, StrategyKind::cref(), 1);
  } catch (const std::exception& e) {
    error = e.what();
  }

  std::lock_guard lock(s->mutex);
  if (result) s->session.attempt = *result;
  const bool success = result && result->success;
  s->session.state = success ? LiveState::kSucceeded : LiveState::kFailed;
  s->session.stage = success ? *result->succeeded_stage : s->session.stage;
  s->session.error = error;
  s->session.finished_at = now();
  nlohmann::json payload = {{"success", success}};
  if (success) payload["succeeded_stage"] = *result->succeeded_stage;
  if (!error.empty()) payload["error"] = error;
  payload["tokens"] = {{"prompt", s->session.attempt.prompt_tokens},
                       {"completion", s->session.attempt.completion_tokens}};
  emit(*s, "Finished", std::move(payload));
  persist(s->session);
}

}  // namespace cref
