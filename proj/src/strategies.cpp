#include "cref/strategies.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>

#include <fmt/format.h>

#include "cref/error.hpp"

namespace cref {

// ------------------------------------------------------------ StrategyKind --

StrategyKind StrategyKind::augmented(InfoSet info) {
  if (info.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "augmented strategy needs a non-empty info set");
  }
  return StrategyKind(Type::kAugmented, info);
}

StrategyKind StrategyKind::parse(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "baseline") return baseline();
  if (lower == "multiregen" || lower == "multiregenerate") return multiregenerate();
  if (lower == "cref") return cref();
  std::string_view rest = text;
  if (lower.rfind("aug-", 0) == 0) rest = text.substr(4);
  else if (lower.rfind("augmented:", 0) == 0) rest = text.substr(10);
  try {
    return augmented(InfoSet::parse(rest));
  } catch (const Error&) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown strategy '{}'", text));
  }
}

std::string StrategyKind::dir_name() const {
  switch (type_) {
    case Type::kBaseline: return "baseline";
    case Type::kMultiRegenerate: return "multiregen";
    case Type::kCref: return "cref";
    case Type::kAugmented: {
      std::string letters = info_.compact();
      std::transform(letters.begin(), letters.end(), letters.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      return "aug-" + letters;
    }
  }
  return "?";
}

std::string StrategyKind::label() const {
  switch (type_) {
    case Type::kBaseline: return "Baseline";
    case Type::kMultiRegenerate: return "MultiRegenerate";
    case Type::kCref: return "CREF";
    case Type::kAugmented: return info_.label();
  }
  return "?";
}

int StrategyKind::rank() const {
  switch (type_) {
    case Type::kBaseline: return 0;
    case Type::kAugmented: {
      const auto all = InfoSet::all_nonempty();
      return 1 + static_cast<int>(std::find(all.begin(), all.end(), info_) - all.begin());
    }
    case Type::kMultiRegenerate: return 8;
    case Type::kCref: return 9;
  }
  return 10;
}

const std::string* AttemptRecord::repaired_code() const {
  if (!succeeded_stage) return nullptr;
  for (const StageRecord& s : stages) {
    if (s.stage_index == *succeeded_stage && s.extracted_code) return &*s.extracted_code;
  }
  return nullptr;
}

std::string session_route(std::string_view submission_id, const StrategyKind& strategy,
                          int trial_index, int session_number) {
  return fmt::format("{}/{}/t{}/s{}", submission_id, strategy.dir_name(), trial_index,
                     session_number);
}

// ------------------------------------------------------------------ runner --

namespace {

int max_stages(const StrategyKind& s) {
  switch (s.type()) {
    case StrategyKind::Type::kBaseline:
    case StrategyKind::Type::kAugmented: return 1;
    case StrategyKind::Type::kMultiRegenerate:
    case StrategyKind::Type::kCref: return 3;
  }
  return 1;
}

bool provider_failed(const StageRecord& s) {
  return s.error == "context_length" || s.error == "provider_error";
}

class Runner {
 public:
  Runner(const StrategyContext& ctx, const Problem& problem, const Submission& submission)
      : ctx_(ctx), problem_(problem), submission_(submission) {
    if (!ctx.sandbox || !ctx.registry) {
      throw Error(ErrorCode::kInvalidArgument, "strategy context needs a sandbox and a registry");
    }
    provider_ = ctx.registry->get(ctx.provider_id);
  }

  AttemptRecord run(const StrategyKind& strategy, int trial_index, const AttemptRecord* resume) {
    if (trial_index < 1) throw Error(ErrorCode::kInvalidArgument, "trial index must be >= 1");
    if (resume) {
      if (resume->submission_id != submission_.id || resume->provider_id != ctx_.provider_id ||
          !(resume->strategy == strategy) || resume->trial_index != trial_index) {
        throw Error(ErrorCode::kInvalidArgument, "partial attempt belongs to a different cell");
      }
      attempt_ = *resume;
    } else {
      attempt_.submission_id = submission_.id;
      attempt_.provider_id = ctx_.provider_id;
      attempt_.strategy = strategy;
      attempt_.trial_index = trial_index;
    }
    attempt_.complete = false;
    started_ = std::chrono::steady_clock::now();
    elapsed_before_ = attempt_.wall_time_ms;

    while (should_continue()) {
      const int stage = static_cast<int>(attempt_.stages.size()) + 1;
      switch (strategy.type()) {
        case StrategyKind::Type::kBaseline: baseline_stage(); break;
        case StrategyKind::Type::kAugmented: augmented_stage(strategy.info()); break;
        case StrategyKind::Type::kMultiRegenerate: multiregenerate_stage(stage); break;
        case StrategyKind::Type::kCref: cref_stage(stage); break;
      }
    }
    attempt_.complete = true;
    update_totals();
    return attempt_;
  }

 private:
  bool should_continue() const {
    if (attempt_.success) return false;
    if (static_cast<int>(attempt_.stages.size()) >= max_stages(attempt_.strategy)) return false;
    // A CREF conversation cannot go on once its provider has failed.
    if (attempt_.strategy.type() == StrategyKind::Type::kCref && !attempt_.stages.empty() &&
        provider_failed(attempt_.stages.back())) {
      return false;
    }
    return true;
  }

  const RunReport& original_report() {
    if (!original_report_) {
      original_report_ =
          ctx_.sandbox->run_all(submission_.incorrect_code, problem_, ctx_.judge_policy);
    }
    return *original_report_;
  }

  InfoPayloads payloads_for(InfoSet info, const RunReport* failing_source) {
    InfoPayloads p;
    if (info.contains(InfoKind::kTutorGuidance)) p.tutor_guidance = submission_.tutor_guidance;
    if (info.contains(InfoKind::kSolutionDescription)) {
      p.solution_description = problem_.solution_description;
    }
    if (info.contains(InfoKind::kFailingTests)) {
      const RunReport& report = failing_source ? *failing_source : original_report();
      p.failing_tests = failing_tests_of(problem_, report);
    }
    return p;
  }

  ChatSession& session_for_stage(int session_number) {
    if (static_cast<int>(attempt_.sessions.size()) >= session_number) {
      return attempt_.sessions[static_cast<std::size_t>(session_number - 1)];
    }
    const std::string route = session_route(submission_.id, attempt_.strategy,
                                            attempt_.trial_index, session_number);
    attempt_.sessions.push_back(open_session(*ctx_.registry, ctx_.provider_id, ctx_.params,
                                             ctx_.provider_id + "/" + route, route));
    return attempt_.sessions.back();
  }

  StageRecord begin_stage(int stage_index, const ChatSession& session) {
    StageRecord stage;
    stage.stage_index = stage_index;
    stage.session_id = session.id;
    if (ctx_.observer) ctx_.observer->on_stage_started(attempt_, stage_index);
    return stage;
  }

  void record_info_tokens(StageRecord& stage, InfoSet info, const InfoPayloads& payloads) {
    for (InfoKind kind : info.members()) {
      stage.info_tokens[std::string(1, to_letter(kind))] =
          estimate_tokens(render_info_entry(kind, payloads));
    }
  }

  /// Sends every entry (all but the last acknowledged locally). Returns false
  /// and records the stage failure when the provider refuses.
  bool exchange(StageRecord& stage, ChatSession& session) {
    ChatSession draft = session;
    try {
      for (std::size_t i = 0; i + 1 < stage.prompt_entries.size(); ++i) {
        append_context_entry(draft, stage.prompt_entries[i], templates::kAcknowledgement);
      }
      stage.response = send(draft, *provider_, stage.prompt_entries.back(), ctx_.registry->retry,
                            ctx_.registry->sleep);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kContextLength) {
        stage.error = "context_length";
      } else if (e.code() == ErrorCode::kProvider) {
        stage.error = "provider_error";
      } else {
        throw;
      }
      stage.error_detail = e.what();
      return false;
    }
    session = std::move(draft);
    return true;
  }

  void validate(StageRecord& stage) {
    stage.extracted_code = extract_code(stage.response, ctx_.extract_options);
    if (!stage.extracted_code) {
      stage.error = "extraction_failed";
      return;
    }
    stage.run_report = ctx_.sandbox->run_all(*stage.extracted_code, problem_, ctx_.judge_policy);
    stage.passed = stage.run_report->passed_all;
  }

  void update_totals() {
    attempt_.prompt_tokens = 0;
    attempt_.completion_tokens = 0;
    for (const ChatSession& s : attempt_.sessions) {
      attempt_.prompt_tokens += s.total_prompt_tokens;
      attempt_.completion_tokens += s.total_completion_tokens;
    }
    attempt_.wall_time_ms =
        elapsed_before_ + std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - started_)
                              .count();
  }

  void finish_stage(StageRecord stage) {
    if (stage.passed) {
      attempt_.succeeded_stage = stage.stage_index;
      attempt_.success = true;
    }
    attempt_.stages.push_back(std::move(stage));
    update_totals();
    if (ctx_.observer) ctx_.observer->on_stage_finished(attempt_, attempt_.stages.back());
  }

  void run_stage(StageRecord stage, ChatSession& session) {
    if (exchange(stage, session)) validate(stage);
    finish_stage(std::move(stage));
  }

  /// Stage with a precomputed bundle of entries in a given session.
  void bundle_stage(int stage_index, int session_number, InfoSet info,
                    const RunReport* failing_source) {
    ChatSession& session = session_for_stage(session_number);
    StageRecord stage = begin_stage(stage_index, session);
    const InfoPayloads payloads = payloads_for(info, failing_source);
    if (payloads.failing_tests && payloads.failing_tests->empty()) {
      stage.error = "no_failing_tests";
      finish_stage(std::move(stage));
      return;
    }
    PromptBundle bundle = build_bundle(problem_, submission_.incorrect_code, info, payloads,
                                       ctx_.prompt_options);
    stage.prompt_entries = std::move(bundle.entries);
    stage.entry_kinds = std::move(bundle.kinds);
    stage.truncated = bundle.truncated;
    record_info_tokens(stage, info, payloads);
    run_stage(std::move(stage), session);
  }

  void baseline_stage() {
    ChatSession& session = session_for_stage(1);
    StageRecord stage = begin_stage(1, session);
    stage.prompt_entries = {render_baseline(problem_, submission_.incorrect_code)};
    stage.entry_kinds = {EntryKind::kCombined};
    run_stage(std::move(stage), session);
  }

  void augmented_stage(InfoSet info) { bundle_stage(1, 1, info, nullptr); }

  void multiregenerate_stage(int stage_index) {
    static constexpr InfoKind kOrder[] = {InfoKind::kTutorGuidance,
                                          InfoKind::kSolutionDescription, InfoKind::kFailingTests};
    InfoSet info;
    for (int i = 0; i < stage_index; ++i) {
      if (ctx_.multiregenerate_cumulative || i == stage_index - 1) info = info.with(kOrder[i]);
    }
    // Every phase repairs the original code in a fresh session.
    bundle_stage(stage_index, stage_index, info, nullptr);
  }

  /// Report of the most recent repaired code, falling back to the original.
  const RunReport& last_code_report() {
    for (auto it = attempt_.stages.rbegin(); it != attempt_.stages.rend(); ++it) {
      if (it->extracted_code && it->run_report) return *it->run_report;
    }
    return original_report();
  }

  void cref_stage(int stage_index) {
    if (stage_index == 1) {
      bundle_stage(1, 1, InfoSet{InfoKind::kTutorGuidance}, nullptr);
      return;
    }
    const InfoKind kind =
        stage_index == 2 ? InfoKind::kSolutionDescription : InfoKind::kFailingTests;
    ChatSession& session = session_for_stage(1);
    StageRecord stage = begin_stage(stage_index, session);
    const RunReport failing_source = kind == InfoKind::kFailingTests ? last_code_report() : RunReport{};
    const InfoPayloads payloads = payloads_for(InfoSet{kind}, &failing_source);
    if (payloads.failing_tests && payloads.failing_tests->empty()) {
      stage.error = "no_failing_tests";
      finish_stage(std::move(stage));
      return;
    }
    stage.prompt_entries = {render_followup(kind, payloads, ctx_.prompt_options, &stage.truncated)};
    stage.entry_kinds = {kind == InfoKind::kFailingTests ? EntryKind::kFailingTests
                                                         : EntryKind::kSolutionDescription};
    record_info_tokens(stage, InfoSet{kind}, payloads);
    run_stage(std::move(stage), session);
  }

  const StrategyContext& ctx_;
  const Problem& problem_;
  const Submission& submission_;
  std::shared_ptr<ChatProvider> provider_;
  AttemptRecord attempt_;
  std::optional<RunReport> original_report_;
  std::chrono::steady_clock::time_point started_;
  std::int64_t elapsed_before_ = 0;
};

}  // namespace

AttemptRecord run_attempt(const StrategyContext& ctx, const Problem& problem,
                          const Submission& submission, const StrategyKind& strategy,
                          int trial_index, const AttemptRecord* resume_from) {
  return Runner(ctx, problem, submission).run(strategy, trial_index, resume_from);
}

AttemptRecord run_baseline(const StrategyContext& ctx, const Problem& problem,
                           const Submission& submission, int trial_index) {
  return run_attempt(ctx, problem, submission, StrategyKind::baseline(), trial_index);
}

AttemptRecord run_augmented(const StrategyContext& ctx, const Problem& problem,
                            const Submission& submission, InfoSet info, int trial_index) {
  return run_attempt(ctx, problem, submission, StrategyKind::augmented(info), trial_index);
}

AttemptRecord run_multiregenerate(const StrategyContext& ctx, const Problem& problem,
                                  const Submission& submission, int trial_index) {
  return run_attempt(ctx, problem, submission, StrategyKind::multiregenerate(), trial_index);
}

AttemptRecord run_cref(const StrategyContext& ctx, const Problem& problem,
                       const Submission& submission, int trial_index) {
  return run_attempt(ctx, problem, submission, StrategyKind::cref(), trial_index);
}

std::vector<AttemptRecord> run_trials(const StrategyContext& ctx, const Problem& problem,
                                      const Submission& submission, const StrategyKind& strategy,
                                      int k) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  std::vector<AttemptRecord> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int t = 1; t <= k; ++t) out.push_back(run_attempt(ctx, problem, submission, strategy, t));
  return out;
}

// -------------------------------------------------------------------- json --

EntryKind entry_kind_from_string(std::string_view name) {
  for (EntryKind k : {EntryKind::kContext, EntryKind::kTutorGuidance,
                      EntryKind::kSolutionDescription, EntryKind::kFailingTests, EntryKind::kTask,
                      EntryKind::kCombined}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown entry kind '{}'", name));
}

void to_json(nlohmann::json& j, const StrategyKind& s) { j = s.dir_name(); }
void from_json(const nlohmann::json& j, StrategyKind& s) {
  s = StrategyKind::parse(j.get<std::string>());
}

void to_json(nlohmann::json& j, const StageRecord& s) {
  nlohmann::json kinds = nlohmann::json::array();
  for (EntryKind k : s.entry_kinds) kinds.push_back(std::string(to_string(k)));
  j = {{"stage_index", s.stage_index},
       {"session_id", s.session_id},
       {"prompt_entries", s.prompt_entries},
       {"entry_kinds", kinds},
       {"response", s.response},
       {"extracted_code", s.extracted_code ? nlohmann::json(*s.extracted_code) : nlohmann::json()},
       {"run_report", s.run_report ? nlohmann::json(*s.run_report) : nlohmann::json()},
       {"passed", s.passed},
       {"error", s.error},
       {"error_detail", s.error_detail},
       {"info_tokens", s.info_tokens},
       {"truncated", s.truncated}};
}

void from_json(const nlohmann::json& j, StageRecord& s) {
  s.stage_index = j.at("stage_index").get<int>();
  s.session_id = j.at("session_id").get<std::string>();
  s.prompt_entries = j.at("prompt_entries").get<std::vector<std::string>>();
  s.entry_kinds.clear();
  for (const auto& k : j.value("entry_kinds", nlohmann::json::array())) {
    s.entry_kinds.push_back(entry_kind_from_string(k.get<std::string>()));
  }
  s.response = j.at("response").get<std::string>();
  s.extracted_code.reset();
  if (!j.at("extracted_code").is_null()) s.extracted_code = j.at("extracted_code").get<std::string>();
  s.run_report.reset();
  if (!j.at("run_report").is_null()) s.run_report = j.at("run_report").get<RunReport>();
  s.passed = j.at("passed").get<bool>();
  s.error = j.value("error", "");
  s.error_detail = j.value("error_detail", "");
  s.info_tokens = j.value("info_tokens", std::map<std::string, std::int64_t>{});
  s.truncated = j.value("truncated", false);
}

void to_json(nlohmann::json& j, const AttemptRecord& a) {
  j = {{"submission_id", a.submission_id},
       {"provider_id", a.provider_id},
       {"strategy", a.strategy},
       {"trial_index", a.trial_index},
       {"stages", a.stages},
       {"succeeded_stage", a.succeeded_stage ? nlohmann::json(*a.succeeded_stage) : nlohmann::json()},
       {"success", a.success},
       {"prompt_tokens", a.prompt_tokens},
       {"completion_tokens", a.completion_tokens},
       {"wall_time_ms", a.wall_time_ms},
       {"sessions", a.sessions},
       {"complete", a.complete}};
}

void from_json(const nlohmann::json& j, AttemptRecord& a) {
  a.submission_id = j.at("submission_id").get<std::string>();
  a.provider_id = j.at("provider_id").get<std::string>();
  a.strategy = j.at("strategy").get<StrategyKind>();
  a.trial_index = j.at("trial_index").get<int>();
  a.stages = j.at("stages").get<std::vector<StageRecord>>();
  a.succeeded_stage.reset();
  if (!j.at("succeeded_stage").is_null()) a.succeeded_stage = j.at("succeeded_stage").get<int>();
  a.success = j.at("success").get<bool>();
  a.prompt_tokens = j.value("prompt_tokens", std::int64_t{0});
  a.completion_tokens = j.value("completion_tokens", std::int64_t{0});
  a.wall_time_ms = j.value("wall_time_ms", std::int64_t{0});
  a.sessions = j.value("sessions", std::vector<ChatSession>{});
  a.complete = j.value("complete", true);
}

}  // namespace cref
