#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cref/corpus.hpp"
#include "cref/strategies.hpp"
#include "cref/syntax_tree.hpp"

namespace cref {

/// Exact fraction; value() is only for display.
struct Ratio {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  /// Compares as rationals, so 1/2 == 2/4.
  bool operator==(const Ratio& other) const { return num * other.den == other.num * den; }
};

/// Rows are submissions, columns trials 1..k.
class OutcomeMatrix {
 public:
  OutcomeMatrix() = default;
  explicit OutcomeMatrix(std::vector<std::vector<bool>> rows);

  /// Throws unless `trials` has the same width as existing rows.
  void add_row(std::vector<bool> trials);

  std::size_t rows() const { return rows_.size(); }
  std::size_t k() const { return rows_.empty() ? 0 : rows_.front().size(); }
  bool empty() const { return rows_.empty(); }
  bool at(std::size_t row, std::size_t trial) const { return rows_[row][trial]; }
  const std::vector<std::vector<bool>>& data() const { return rows_; }

 private:
  std::vector<std::vector<bool>> rows_;
};

/// Fraction of rows with at least one success. Throws for an empty matrix.
Ratio top_k(const OutcomeMatrix& matrix);
/// Successful cells over all cells. Throws for an empty matrix.
Ratio avg_k(const OutcomeMatrix& matrix);

/// ted(i, r) / size(i).
double rps(const SyntaxTree& incorrect, const SyntaxTree& repaired);
/// ted(i, r) / ted(i, c). Throws Error(kInvalidArgument) "ground truth equals
/// incorrect code" when ted(i, c) is 0.
double rpsr(const SyntaxTree& incorrect, const SyntaxTree& corrected, const SyntaxTree& repaired);

struct PatchMeasure {
  std::string submission_id;
  std::int64_t ted_ir = 0;
  std::int64_t ted_ic = 0;
  std::size_t incorrect_size = 0;
  double rps = 0.0;
  double rpsr = 0.0;
};

PatchMeasure measure_patch(const std::string& submission_id, std::string_view incorrect_code,
                           std::string_view corrected_code, std::string_view repaired_code);

enum class RpsrAggregation { kFirstSuccess, kAllSuccesses };

struct AggregateOptions {
  RpsrAggregation rpsr_aggregation = RpsrAggregation::kFirstSuccess;
  /// Submissions whose ground truth failed validation; excluded from RPSR only.
  std::set<std::string> flagged_ground_truths;
};

struct StrategyRow {
  std::string provider_id;
  StrategyKind strategy = StrategyKind::baseline();
  int k = 0;
  std::size_t submissions = 0;
  Ratio top;
  Ratio avg;
  std::optional<double> rpsr;  // absent when nothing contributed
  std::size_t rpsr_samples = 0;
  /// AVG-k per tier that has submissions.
  std::map<int, Ratio> tier_avg;
};

struct MetricsReport {
  std::vector<StrategyRow> rows;  // sorted by (strategy, provider)
  std::vector<std::string> warnings;

  std::string to_markdown() const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

/// Groups attempts by (provider, strategy). Each group must cover every one of
/// its submissions with trials 1..k exactly once. Throws Error(kInvalidArgument)
/// "no attempts" for an empty input.
MetricsReport aggregate(const std::vector<AttemptRecord>& attempts, const Corpus& corpus,
                        const AggregateOptions& options = {});

std::string format_percent(const Ratio& r);
std::string format_rpsr(const std::optional<double>& value);

}  // namespace cref
