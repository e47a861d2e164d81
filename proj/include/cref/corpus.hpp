#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cref {

class Sandbox;
struct RunReport;

struct TestCase {
  int index = 0;  // 1-based, contiguous per problem
  std::string input_text;
  std::string expected_output_text;

  bool operator==(const TestCase&) const = default;
};

struct Problem {
  std::string id;
  std::string title;
  std::string statement;
  std::string input_format;
  std::string output_format;
  int time_limit_ms = 1000;
  int memory_limit_kb = 65536;
  int tier = 1;
  std::string category;
  std::string solution_description;
  std::vector<TestCase> test_cases;

  bool operator==(const Problem&) const = default;
};

struct Submission {
  std::string id;
  std::string problem_id;
  std::string student_id;
  std::string incorrect_code;
  std::string tutor_guidance;
  std::string corrected_code;

  bool operator==(const Submission&) const = default;
};

inline constexpr int kMinTier = 1;
inline constexpr int kMaxTier = 12;

/// Immutable after ingest. Problems and submissions are kept sorted by id so
/// every iteration order downstream is deterministic.
class Corpus {
 public:
  Corpus() = default;
  Corpus(std::vector<Problem> problems, std::vector<Submission> submissions);

  const std::vector<Problem>& problems() const { return problems_; }
  const std::vector<Submission>& submissions() const { return submissions_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  const Problem* find_problem(std::string_view id) const;
  const Submission* find_submission(std::string_view id) const;
  /// Throws kNotFound.
  const Problem& problem_of(const Submission& submission) const;

  void add_warning(std::string warning) { warnings_.push_back(std::move(warning)); }

  bool operator==(const Corpus& other) const {
    return problems_ == other.problems_ && submissions_ == other.submissions_;
  }

 private:
  std::vector<Problem> problems_;
  std::vector<Submission> submissions_;
  std::vector<std::string> warnings_;
};

struct CorpusStats {
  std::size_t problems = 0;
  std::size_t submissions = 0;
  double mean_tests_per_problem = 0.0;
  double mean_guidance_words = 0.0;
  std::map<int, std::size_t> submissions_per_tier;
};

/// Strips every space, tab, CR and LF. Dedup compares the results byte-wise.
std::string normalize_for_dedup(std::string_view code);

/// Loads either a problem-directory tree or a `corpus.json` bundle.
/// Throws Error(kCorpus) with a file (and line, for JSON) diagnostic.
Corpus ingest(const std::filesystem::path& root);

/// Writes the directory layout that ingest() reads back.
void export_directory(const Corpus& corpus, const std::filesystem::path& root);
void export_bundle(const Corpus& corpus, const std::filesystem::path& file);

nlohmann::json to_bundle_json(const Corpus& corpus);
Corpus from_bundle_json(const nlohmann::json& bundle);

struct CorpusFilter {
  std::optional<std::set<int>> tiers;
  std::optional<std::set<std::string>> problem_ids;
};

/// An empty result is legal and carries a warning.
Corpus filter(const Corpus& corpus, const CorpusFilter& selection);

CorpusStats compute_stats(const Corpus& corpus);

struct GroundTruthFailure {
  std::string submission_id;
  std::string problem_id;
  std::string verdict;  // first non-Accepted verdict name
  std::vector<int> failing_tests;
  std::string detail;
};

struct ValidationReport {
  std::vector<GroundTruthFailure> failures;
  std::size_t checked = 0;

  bool ok() const { return failures.empty(); }
  std::set<std::string> flagged_ids() const;
};

/// Compiles every corrected_code and runs it against its problem's tests.
ValidationReport validate_corpus(const Corpus& corpus, Sandbox& sandbox);

void to_json(nlohmann::json& j, const TestCase& t);
void from_json(const nlohmann::json& j, TestCase& t);
void to_json(nlohmann::json& j, const Problem& p);
void from_json(const nlohmann::json& j, Problem& p);
void to_json(nlohmann::json& j, const Submission& s);
void from_json(const nlohmann::json& j, Submission& s);
void to_json(nlohmann::json& j, const ValidationReport& r);
void from_json(const nlohmann::json& j, ValidationReport& r);

}  // namespace cref
