#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cref/corpus.hpp"
#include "cref/llm.hpp"
#include "cref/prompting.hpp"
#include "cref/sandbox.hpp"

namespace cref {

class StrategyKind {
 public:
  enum class Type { kBaseline, kAugmented, kMultiRegenerate, kCref };

  StrategyKind() : StrategyKind(Type::kBaseline, {}) {}

  static StrategyKind baseline() { return StrategyKind(Type::kBaseline, {}); }
  /// Throws Error(kInvalidArgument) for an empty set.
  static StrategyKind augmented(InfoSet info);
  static StrategyKind multiregenerate() { return StrategyKind(Type::kMultiRegenerate, {}); }
  static StrategyKind cref() { return StrategyKind(Type::kCref, {}); }

  /// Accepts the directory names ("baseline", "aug-ts", "multiregen", "cref"),
  /// report labels ("T&S&F", "CREF") and "tsf" as shorthand for aug-tsf.
  static StrategyKind parse(std::string_view text);

  Type type() const { return type_; }
  InfoSet info() const { return info_; }

  /// Path-safe name: baseline, aug-<letters>, multiregen, cref.
  std::string dir_name() const;
  /// Report name: Baseline, T&S&F, MultiRegenerate, CREF.
  std::string label() const;

  bool operator==(const StrategyKind&) const = default;
  /// Report order: Baseline, augmented sets in all_nonempty() order, MultiRegenerate, CREF.
  bool operator<(const StrategyKind& other) const { return rank() < other.rank(); }

 private:
  StrategyKind(Type type, InfoSet info) : type_(type), info_(info) {}
  int rank() const;

  Type type_;
  InfoSet info_;
};

struct StageRecord {
  int stage_index = 1;
  std::string session_id;
  std::vector<std::string> prompt_entries;
  std::vector<EntryKind> entry_kinds;
  std::string response;
  std::optional<std::string> extracted_code;
  std::optional<RunReport> run_report;
  bool passed = false;
  /// "", "extraction_failed", "context_length", "provider_error", "no_failing_tests".
  std::string error;
  std::string error_detail;
  /// Estimated tokens of each info entry sent in this stage, keyed "T"/"S"/"F".
  std::map<std::string, std::int64_t> info_tokens;
  bool truncated = false;
};

struct AttemptRecord {
  std::string submission_id;
  std::string provider_id;
  StrategyKind strategy = StrategyKind::baseline();
  int trial_index = 1;
  std::vector<StageRecord> stages;
  std::optional<int> succeeded_stage;
  bool success = false;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t wall_time_ms = 0;
  /// Full transcripts, one per session used, in stage order.
  std::vector<ChatSession> sessions;
  /// False while stages may still follow (persisted partial attempt).
  bool complete = false;

  /// Extracted code of the succeeded stage.
  const std::string* repaired_code() const;
};

class AttemptObserver {
 public:
  virtual ~AttemptObserver() = default;
  virtual void on_stage_started(const AttemptRecord& /*attempt*/, int /*stage_index*/) {}
  virtual void on_stage_finished(const AttemptRecord& /*attempt*/,
                                 const StageRecord& /*stage*/) {}
};

struct StrategyContext {
  Sandbox* sandbox = nullptr;
  ProviderRegistry* registry = nullptr;
  std::string provider_id;
  SamplingParams params;
  PromptOptions prompt_options;
  ExtractOptions extract_options;
  JudgePolicy judge_policy;
  /// MultiRegenerate phase n carries info types 1..n (otherwise only type n).
  bool multiregenerate_cumulative = true;
  AttemptObserver* observer = nullptr;
};

/// Runs one trial. `resume_from` continues a persisted partial attempt of the
/// same cell without repeating its finished stages. Provider exhaustion
/// (Error kProviderUnavailable) propagates after the observer has seen every
/// finished stage; context-length and hard provider errors are recorded as
/// stage failures.
AttemptRecord run_attempt(const StrategyContext& ctx, const Problem& problem,
                          const Submission& submission, const StrategyKind& strategy,
                          int trial_index, const AttemptRecord* resume_from = nullptr);

AttemptRecord run_baseline(const StrategyContext& ctx, const Problem& problem,
                           const Submission& submission, int trial_index = 1);
AttemptRecord run_augmented(const StrategyContext& ctx, const Problem& problem,
                            const Submission& submission, InfoSet info, int trial_index = 1);
AttemptRecord run_multiregenerate(const StrategyContext& ctx, const Problem& problem,
                                  const Submission& submission, int trial_index = 1);
AttemptRecord run_cref(const StrategyContext& ctx, const Problem& problem,
                       const Submission& submission, int trial_index = 1);

/// k independent attempts with trial indices 1..k. Throws for k < 1.
std::vector<AttemptRecord> run_trials(const StrategyContext& ctx, const Problem& problem,
                                      const Submission& submission, const StrategyKind& strategy,
                                      int k);

/// Replay routing key of a session: "<submission>/<strategy>/t<trial>/s<n>".
std::string session_route(std::string_view submission_id, const StrategyKind& strategy,
                          int trial_index, int session_number);

void to_json(nlohmann::json& j, const StrategyKind& s);
void from_json(const nlohmann::json& j, StrategyKind& s);
void to_json(nlohmann::json& j, const StageRecord& s);
void from_json(const nlohmann::json& j, StageRecord& s);
void to_json(nlohmann::json& j, const AttemptRecord& a);
void from_json(const nlohmann::json& j, AttemptRecord& a);

EntryKind entry_kind_from_string(std::string_view name);

}  // namespace cref
