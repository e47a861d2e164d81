#include "cref/metrics.hpp"

#include <algorithm>
#include <sstream>

#include <fmt/format.h>

#include "cref/error.hpp"

namespace cref {

OutcomeMatrix::OutcomeMatrix(std::vector<std::vector<bool>> rows) {
  for (auto& r : rows) add_row(std::move(r));
}

void OutcomeMatrix::add_row(std::vector<bool> trials) {
  if (trials.empty()) throw Error(ErrorCode::kInvalidArgument, "outcome row needs k >= 1 trials");
  if (!rows_.empty() && trials.size() != rows_.front().size()) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("outcome row has {} trials, expected {}", trials.size(),
                            rows_.front().size()));
  }
  rows_.push_back(std::move(trials));
}

Ratio top_k(const OutcomeMatrix& matrix) {
  if (matrix.empty()) throw Error(ErrorCode::kInvalidArgument, "empty outcome matrix");
  std::int64_t hits = 0;
  for (const auto& row : matrix.data()) {
    hits += std::any_of(row.begin(), row.end(), [](bool b) { return b; }) ? 1 : 0;
  }
  return {hits, static_cast<std::int64_t>(matrix.rows())};
}

Ratio avg_k(const OutcomeMatrix& matrix) {
  if (matrix.empty()) throw Error(ErrorCode::kInvalidArgument, "empty outcome matrix");
  std::int64_t hits = 0;
  for (const auto& row : matrix.data()) {
    hits += std::count(row.begin(), row.end(), true);
  }
  return {hits, static_cast<std::int64_t>(matrix.rows() * matrix.k())};
}

double rps(const SyntaxTree& incorrect, const SyntaxTree& repaired) {
  if (incorrect.size() == 0) throw Error(ErrorCode::kInvalidArgument, "empty incorrect tree");
  return static_cast<double>(ted(incorrect, repaired)) / static_cast<double>(incorrect.size());
}

double rpsr(const SyntaxTree& incorrect, const SyntaxTree& corrected, const SyntaxTree& repaired) {
  const std::int64_t ted_ic = ted(incorrect, corrected);
  if (ted_ic == 0) {
    throw Error(ErrorCode::kInvalidArgument, "ground truth equals incorrect code");
  }
  return static_cast<double>(ted(incorrect, repaired)) / static_cast<double>(ted_ic);
}

PatchMeasure measure_patch(const std::string& submission_id, std::string_view incorrect_code,
                           std::string_view corrected_code, std::string_view repaired_code) {
  const SyntaxTree i = parse_ast(incorrect_code);
  const SyntaxTree c = parse_ast(corrected_code);
  const SyntaxTree r = parse_ast(repaired_code);
  PatchMeasure m;
  m.submission_id = submission_id;
  m.ted_ir = ted(i, r);
  m.ted_ic = ted(i, c);
  m.incorrect_size = i.size();
  if (m.ted_ic == 0) throw Error(ErrorCode::kInvalidArgument, "ground truth equals incorrect code");
  m.rps = static_cast<double>(m.ted_ir) / static_cast<double>(m.incorrect_size);
  m.rpsr = static_cast<double>(m.ted_ir) / static_cast<double>(m.ted_ic);
  return m;
}

std::string format_percent(const Ratio& r) { return fmt::format("{:.1f}%", r.value() * 100.0); }

std::string format_rpsr(const std::optional<double>& value) {
  return value ? fmt::format("{:.3f}", *value) : "/";
}

// --------------------------------------------------------------- aggregate --

namespace {

class TreeCache {
 public:
  const SyntaxTree& get(const std::string& code) {
    auto it = trees_.find(code);
    if (it == trees_.end()) it = trees_.emplace(code, parse_ast(code)).first;
    return it->second;
  }

 private:
  std::map<std::string, SyntaxTree> trees_;
};

struct GroupKey {
  StrategyKind strategy;
  std::string provider_id;

  bool operator<(const GroupKey& o) const {
    if (strategy < o.strategy) return true;
    if (o.strategy < strategy) return false;
    return provider_id < o.provider_id;
  }
};

}  // namespace

MetricsReport aggregate(const std::vector<AttemptRecord>& attempts, const Corpus& corpus,
                        const AggregateOptions& options) {
  if (attempts.empty()) throw Error(ErrorCode::kInvalidArgument, "no attempts");

  // group -> submission -> trial -> attempt
  std::map<GroupKey, std::map<std::string, std::map<int, const AttemptRecord*>>> groups;
  for (const AttemptRecord& a : attempts) {
    auto& trials = groups[{a.strategy, a.provider_id}][a.submission_id];
    if (!trials.emplace(a.trial_index, &a).second) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("duplicate attempt {}/{}/{}/t{}", a.provider_id, a.submission_id,
                              a.strategy.dir_name(), a.trial_index));
    }
  }

  MetricsReport report;
  TreeCache trees;
  for (const auto& [key, by_submission] : groups) {
    StrategyRow row;
    row.provider_id = key.provider_id;
    row.strategy = key.strategy;
    row.k = by_submission.begin()->second.rbegin()->first;
    row.submissions = by_submission.size();

    OutcomeMatrix all;
    std::map<int, OutcomeMatrix> per_tier;
    double rpsr_sum = 0.0;
    for (const auto& [submission_id, trials] : by_submission) {
      const Submission* sub = corpus.find_submission(submission_id);
      if (!sub) {
        throw Error(ErrorCode::kInvalidArgument,
                    fmt::format("attempt references unknown submission '{}'", submission_id));
      }
      if (static_cast<int>(trials.size()) != row.k || trials.begin()->first != 1 ||
          trials.rbegin()->first != row.k) {
        throw Error(ErrorCode::kInvalidArgument,
                    fmt::format("non-rectangular trial grid for {} under {}/{}", submission_id,
                                key.provider_id, key.strategy.dir_name()));
      }
      std::vector<bool> cells;
      for (const auto& [trial, attempt] : trials) cells.push_back(attempt->success);
      all.add_row(cells);
      per_tier[corpus.problem_of(*sub).tier].add_row(cells);

      if (options.flagged_ground_truths.contains(submission_id)) continue;
      for (const auto& [trial, attempt] : trials) {
        const std::string* repaired = attempt->repaired_code();
        if (!attempt->success || !repaired) continue;
        try {
          rpsr_sum += rpsr(trees.get(sub->incorrect_code), trees.get(sub->corrected_code),
                           trees.get(*repaired));
          ++row.rpsr_samples;
        } catch (const Error& e) {
          report.warnings.push_back(fmt::format("{} t{}: RPSR skipped: {}", submission_id, trial,
                                                e.what()));
        }
        if (options.rpsr_aggregation == RpsrAggregation::kFirstSuccess) break;
      }
    }
    row.top = top_k(all);
    row.avg = avg_k(all);
    for (const auto& [tier, matrix] : per_tier) row.tier_avg[tier] = avg_k(matrix);
    if (row.rpsr_samples > 0) row.rpsr = rpsr_sum / static_cast<double>(row.rpsr_samples);
    report.rows.push_back(std::move(row));
  }
  return report;
}

// ----------------------------------------------------------------- output --

namespace {

std::vector<std::vector<const StrategyRow*>> by_strategy(const std::vector<StrategyRow>& rows) {
  std::vector<std::vector<const StrategyRow*>> out;
  for (const StrategyRow& r : rows) {
    if (out.empty() || !(out.back().front()->strategy == r.strategy)) out.emplace_back();
    out.back().push_back(&r);
  }
  return out;
}

}  // namespace

std::string MetricsReport::to_markdown() const {
  std::ostringstream out;
  out << "# Repair results\n";
  for (const auto& group : by_strategy(rows)) {
    const int k = group.front()->k;
    out << "\n## " << group.front()->strategy.label() << "\n\n";
    out << fmt::format("| Model | TOP-{0} | AVG-{0} | RPSR |\n", k);
    out << "| --- | --- | --- | --- |\n";
    for (const StrategyRow* r : group) {
      out << fmt::format("| {} | {} | {} | {} |\n", r->provider_id, format_percent(r->top),
                         format_percent(r->avg), format_rpsr(r->rpsr));
    }
    out << fmt::format("\n### AVG-{} by tier\n\n| Tier |", k);
    for (const StrategyRow* r : group) out << ' ' << r->provider_id << " |";
    out << "\n| --- |";
    for (std::size_t i = 0; i < group.size(); ++i) out << " --- |";
    out << '\n';
    for (int tier = kMinTier; tier <= kMaxTier; ++tier) {
      out << "| T" << tier << " |";
      for (const StrategyRow* r : group) {
        auto it = r->tier_avg.find(tier);
        out << ' ' << (it == r->tier_avg.end() ? std::string("/") : format_percent(it->second))
            << " |";
      }
      out << '\n';
    }
  }
  return out.str();
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << "model,strategy,k,submissions,top_k,avg_k,rpsr,rpsr_samples";
  for (int tier = kMinTier; tier <= kMaxTier; ++tier) out << ",T" << tier;
  out << '\n';
  for (const StrategyRow& r : rows) {
    out << fmt::format("{},{},{},{},{:.1f},{:.1f},{},{}", r.provider_id, r.strategy.label(), r.k,
                       r.submissions, r.top.value() * 100.0, r.avg.value() * 100.0,
                       r.rpsr ? fmt::format("{:.3f}", *r.rpsr) : std::string(), r.rpsr_samples);
    for (int tier = kMinTier; tier <= kMaxTier; ++tier) {
      auto it = r.tier_avg.find(tier);
      out << ',';
      if (it != r.tier_avg.end()) out << fmt::format("{:.1f}", it->second.value() * 100.0);
    }
    out << '\n';
  }
  return out.str();
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = {{"rows", nlohmann::json::array()}, {"warnings", warnings}};
  for (const StrategyRow& r : rows) {
    nlohmann::json tiers = nlohmann::json::object();
    for (const auto& [tier, ratio] : r.tier_avg) {
      tiers["T" + std::to_string(tier)] = {{"num", ratio.num}, {"den", ratio.den}};
    }
    j["rows"].push_back({{"model", r.provider_id},
                         {"strategy", r.strategy.label()},
                         {"strategy_id", r.strategy.dir_name()},
                         {"k", r.k},
                         {"submissions", r.submissions},
                         {"top_k", {{"num", r.top.num}, {"den", r.top.den}}},
                         {"avg_k", {{"num", r.avg.num}, {"den", r.avg.den}}},
                         {"rpsr", r.rpsr ? nlohmann::json(*r.rpsr) : nlohmann::json()},
                         {"rpsr_samples", r.rpsr_samples},
                         {"tier_avg_k", tiers}});
  }
  return j;
}

}  // namespace cref
