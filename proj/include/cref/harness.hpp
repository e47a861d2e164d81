#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cref/corpus.hpp"
#include "cref/llm.hpp"
#include "cref/metrics.hpp"
#include "cref/strategies.hpp"

namespace cref {

struct ExperimentPlan {
  std::string run_id;
  CorpusFilter corpus_filter;
  std::vector<StrategyKind> strategies;
  std::vector<std::string> providers;
  int k = 5;
  SamplingParams params;
  int parallelism = 1;
  /// Only shuffles the order in which cells are scheduled.
  std::uint64_t seed = 0;
  RpsrAggregation rpsr_aggregation = RpsrAggregation::kFirstSuccess;
  bool multiregenerate_cumulative = true;
  std::optional<std::size_t> entry_byte_cap;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentPlan from_json(const nlohmann::json& j);
};

std::string sha256_hex(std::string_view data);

/// File-backed run storage:
///   <root>/<run_id>/manifest.json, corpus.json, validation.json
///   <root>/<run_id>/<provider>/<submission>/<strategy>/<trial>.json
///   <root>/<run_id>/<provider>/<submission>/<strategy>/<trial>.partial.json
///   <root>/<run_id>/report.{md,csv,json}, tokens.{md,json}
/// Every write goes to a temporary file first and is renamed into place, so
/// readers only ever see whole documents.
class ResultsStore {
 public:
  explicit ResultsStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path run_dir(const std::string& run_id) const;
  bool run_exists(const std::string& run_id) const;

  void write_json(const std::string& run_id, const std::string& name, const nlohmann::json& j);
  void write_text(const std::string& run_id, const std::string& name, const std::string& text);
  std::optional<nlohmann::json> read_json(const std::string& run_id, const std::string& name) const;

  std::filesystem::path attempt_path(const std::string& run_id, const std::string& provider_id,
                                     const std::string& submission_id,
                                     const StrategyKind& strategy, int trial,
                                     bool partial = false) const;

  /// Writes the final record and drops any partial one.
  void save_attempt(const std::string& run_id, const AttemptRecord& attempt);
  void save_partial(const std::string& run_id, const AttemptRecord& attempt);
  std::optional<AttemptRecord> load_attempt(const std::string& run_id,
                                            const std::string& provider_id,
                                            const std::string& submission_id,
                                            const StrategyKind& strategy, int trial,
                                            bool partial = false) const;

  /// Every completed attempt of a run, in path order.
  std::vector<AttemptRecord> load_all(const std::string& run_id) const;

 private:
  void atomic_write(const std::filesystem::path& path, const std::string& content);

  std::filesystem::path root_;
  std::mutex write_mutex_;
};

struct RunOptions {
  bool resume = false;
  std::function<void(const std::string&)> log;
};

struct RunOutcome {
  std::optional<MetricsReport> report;
  std::size_t cells_total = 0;
  std::size_t cells_already_done = 0;
  std::size_t cells_executed = 0;
  /// Provider exhaustion stopped the run; finished work is kept.
  bool partial = false;
  std::vector<std::string> errors;

  /// 0 success, 2 partial (resumable), 1 hard error.
  int exit_code() const;
};

/// Runs every (provider, strategy, submission, trial) cell not yet stored,
/// then aggregates the stored attempts and writes the report files. An
/// existing run directory is only reused with options.resume and an
/// unchanged plan and corpus.
RunOutcome run_experiment(const ExperimentPlan& plan, const Corpus& corpus, Sandbox& sandbox,
                          ProviderRegistry& registry, ResultsStore& store,
                          const RunOptions& options = {});

/// Recomputes the report from stored attempts and rewrites report and token
/// files. Throws Error(kNotFound) for an unknown run and
/// Error(kInvalidArgument) "no attempts" for an empty one.
MetricsReport write_reports(ResultsStore& store, const std::string& run_id);

struct TokenSummaryRow {
  std::string provider_id;
  StrategyKind strategy = StrategyKind::baseline();
  std::size_t attempts = 0;
  double mean_prompt_tokens = 0.0;
  double mean_completion_tokens = 0.0;
  /// Mean estimated tokens per info entry, keyed "T"/"S"/"F", where recorded.
  std::map<std::string, double> mean_info_tokens;
};

std::vector<TokenSummaryRow> token_summary(const std::vector<AttemptRecord>& attempts);
std::string token_summary_markdown(const std::vector<TokenSummaryRow>& rows);
nlohmann::json token_summary_json(const std::vector<TokenSummaryRow>& rows);

}  // namespace cref
