#include "cref/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "cref/error.hpp"
#include "cref/sandbox.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cref {

namespace {

[[noreturn]] void corpus_error(const fs::path& file, const std::string& message) {
  throw Error(ErrorCode::kCorpus, fmt::format("{}: {}", file.string(), message));
}

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) corpus_error(file, "cannot open file");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const fs::path& file, std::string_view content) {
  fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kCorpus, fmt::format("{}: cannot write file", file.string()));
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

json parse_json_file(const fs::path& file) {
  const std::string text = read_file(file);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1;
    const std::size_t limit = std::min<std::size_t>(e.byte, text.size());
    for (std::size_t i = 0; i + 1 < limit; ++i) {
      if (text[i] == '\n') ++line;
    }
    corpus_error(file, fmt::format("line {}: {}", line, e.what()));
  }
}

template <typename T>
T required(const json& manifest, const char* key, const fs::path& file) {
  auto it = manifest.find(key);
  if (it == manifest.end()) corpus_error(file, fmt::format("missing manifest field '{}'", key));
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    corpus_error(file, fmt::format("manifest field '{}' has the wrong type", key));
  }
}

std::string optional_string(const json& manifest, const char* key) {
  auto it = manifest.find(key);
  return it == manifest.end() ? std::string{} : it->get<std::string>();
}

void check_problem(const Problem& p, const fs::path& where) {
  if (p.tier < kMinTier || p.tier > kMaxTier) {
    corpus_error(where, fmt::format("tier out of range: {} (expected {}..{})", p.tier, kMinTier,
                                    kMaxTier));
  }
  if (p.time_limit_ms <= 0) corpus_error(where, "time_limit_ms must be positive");
  if (p.memory_limit_kb <= 0) corpus_error(where, "memory_limit_kb must be positive");
  if (p.test_cases.empty()) corpus_error(where, "problem has no test cases");
  for (std::size_t i = 0; i < p.test_cases.size(); ++i) {
    if (p.test_cases[i].index != static_cast<int>(i + 1)) {
      corpus_error(where, fmt::format("test indices must be contiguous from 1; found {} at position {}",
                                      p.test_cases[i].index, i + 1));
    }
  }
}

std::vector<TestCase> load_tests(const fs::path& dir) {
  std::map<int, std::pair<std::optional<fs::path>, std::optional<fs::path>>> files;
  if (!fs::is_directory(dir)) corpus_error(dir, "missing tests directory");
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path& path = entry.path();
    const std::string ext = path.extension().string();
    if (ext != ".in" && ext != ".out") continue;
    const std::string stem = path.stem().string();
    int index = 0;
    auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), index);
    if (ec != std::errc{} || ptr != stem.data() + stem.size() || index < 1) {
      corpus_error(path, "test file name must be a positive number");
    }
    auto& slot = files[index];
    (ext == ".in" ? slot.first : slot.second) = path;
  }
  std::vector<TestCase> tests;
  for (const auto& [index, pair] : files) {
    if (!pair.second) corpus_error(*pair.first, "test input without matching output");
    if (!pair.first) corpus_error(*pair.second, "test output without matching input");
    tests.push_back({index, read_file(*pair.first), read_file(*pair.second)});
  }
  return tests;
}

Problem load_problem(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) corpus_error(manifest_path, "missing manifest.json");
  const json manifest = parse_json_file(manifest_path);
  Problem p;
  p.id = dir.filename().string();
  p.title = required<std::string>(manifest, "title", manifest_path);
  p.tier = required<int>(manifest, "tier", manifest_path);
  p.category = required<std::string>(manifest, "category", manifest_path);
  p.time_limit_ms = required<int>(manifest, "time_limit_ms", manifest_path);
  p.memory_limit_kb = required<int>(manifest, "memory_limit_kb", manifest_path);
  const auto statement_file = required<std::string>(manifest, "statement", manifest_path);
  const auto solution_file = required<std::string>(manifest, "solution", manifest_path);
  p.input_format = optional_string(manifest, "input_format");
  p.output_format = optional_string(manifest, "output_format");
  p.statement = read_file(dir / statement_file);
  p.solution_description = read_file(dir / solution_file);
  p.test_cases = load_tests(dir / "tests");
  check_problem(p, manifest_path);
  return p;
}

Submission load_submission(const fs::path& dir, const std::string& problem_id) {
  Submission s;
  s.id = dir.filename().string();
  s.problem_id = problem_id;
  s.incorrect_code = read_file(dir / "code.cpp");
  s.tutor_guidance = read_file(dir / "guidance.md");
  s.corrected_code = read_file(dir / "corrected.cpp");
  if (fs::exists(dir / "meta.json")) {
    const json meta = parse_json_file(dir / "meta.json");
    s.student_id = optional_string(meta, "student_id");
  }
  return s;
}

bool is_blank(std::string_view text) {
  return std::all_of(text.begin(), text.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

/// Shared tail of both ingest paths: cross-reference checks and dedup.
Corpus assemble(std::vector<Problem> problems, std::vector<Submission> submissions,
                const fs::path& origin) {
  std::sort(problems.begin(), problems.end(),
            [](const Problem& a, const Problem& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < problems.size(); ++i) {
    if (problems[i].id == problems[i - 1].id) {
      corpus_error(origin, fmt::format("duplicate problem id '{}'", problems[i].id));
    }
  }
  std::sort(submissions.begin(), submissions.end(),
            [](const Submission& a, const Submission& b) { return a.id < b.id; });

  std::vector<std::string> warnings;
  std::vector<Submission> kept;
  std::set<std::string> ids;
  std::map<std::string, std::map<std::string, std::string>> seen;  // problem -> normalized -> id
  for (auto& s : submissions) {
    if (!ids.insert(s.id).second) {
      corpus_error(origin, fmt::format("duplicate submission id '{}'", s.id));
    }
    const bool known = std::any_of(problems.begin(), problems.end(),
                                   [&](const Problem& p) { return p.id == s.problem_id; });
    if (!known) {
      corpus_error(origin, fmt::format("submission '{}' references unknown problem '{}'", s.id,
                                       s.problem_id));
    }
    if (is_blank(s.tutor_guidance)) {
      corpus_error(origin, fmt::format("submission '{}' has empty tutor guidance", s.id));
    }
    auto [it, inserted] = seen[s.problem_id].emplace(normalize_for_dedup(s.incorrect_code), s.id);
    if (!inserted) {
      warnings.push_back(fmt::format("submission '{}' dropped: duplicate of '{}' ignoring whitespace",
                                     s.id, it->second));
      continue;
    }
    kept.push_back(std::move(s));
  }
  Corpus corpus(std::move(problems), std::move(kept));
  for (auto& w : warnings) corpus.add_warning(std::move(w));
  return corpus;
}

Corpus ingest_directory(const fs::path& root) {
  std::vector<Problem> problems;
  std::vector<Submission> submissions;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    problems.push_back(load_problem(dir));
    const fs::path subs = dir / "submissions";
    if (!fs::is_directory(subs)) continue;
    std::vector<fs::path> sub_dirs;
    for (const auto& entry : fs::directory_iterator(subs)) {
      if (entry.is_directory()) sub_dirs.push_back(entry.path());
    }
    std::sort(sub_dirs.begin(), sub_dirs.end());
    for (const auto& sub_dir : sub_dirs) {
      submissions.push_back(load_submission(sub_dir, problems.back().id));
    }
  }
  return assemble(std::move(problems), std::move(submissions), root);
}

}  // namespace

Corpus::Corpus(std::vector<Problem> problems, std::vector<Submission> submissions)
    : problems_(std::move(problems)), submissions_(std::move(submissions)) {}

const Problem* Corpus::find_problem(std::string_view id) const {
  for (const auto& p : problems_) {
    if (p.id == id) return &p;
  }
  return nullptr;
}

const Submission* Corpus::find_submission(std::string_view id) const {
  for (const auto& s : submissions_) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

const Problem& Corpus::problem_of(const Submission& submission) const {
  const Problem* p = find_problem(submission.problem_id);
  if (!p) {
    throw Error(ErrorCode::kNotFound, fmt::format("unknown problem '{}'", submission.problem_id));
  }
  return *p;
}

std::string normalize_for_dedup(std::string_view code) {
  std::string out;
  out.reserve(code.size());
  for (char c : code) {
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') continue;
    out.push_back(c);
  }
  return out;
}

Corpus ingest(const fs::path& root) {
  if (!fs::exists(root)) corpus_error(root, "corpus path does not exist");
  if (fs::is_regular_file(root)) return from_bundle_json(parse_json_file(root));
  return ingest_directory(root);
}

void export_directory(const Corpus& corpus, const fs::path& root) {
  for (const auto& p : corpus.problems()) {
    const fs::path dir = root / p.id;
    json manifest = {{"title", p.title},
                     {"tier", p.tier},
                     {"category", p.category},
                     {"time_limit_ms", p.time_limit_ms},
                     {"memory_limit_kb", p.memory_limit_kb},
                     {"statement", "statement.md"},
                     {"solution", "solution.md"},
                     {"input_format", p.input_format},
                     {"output_format", p.output_format}};
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    write_file(dir / "statement.md", p.statement);
    write_file(dir / "solution.md", p.solution_description);
    for (const auto& t : p.test_cases) {
      const std::string stem = fmt::format("{:02d}", t.index);
      write_file(dir / "tests" / (stem + ".in"), t.input_text);
      write_file(dir / "tests" / (stem + ".out"), t.expected_output_text);
    }
  }
  for (const auto& s : corpus.submissions()) {
    const fs::path dir = root / s.problem_id / "submissions" / s.id;
    write_file(dir / "code.cpp", s.incorrect_code);
    write_file(dir / "guidance.md", s.tutor_guidance);
    write_file(dir / "corrected.cpp", s.corrected_code);
    if (!s.student_id.empty()) {
      write_file(dir / "meta.json", json{{"student_id", s.student_id}}.dump(2) + "\n");
    }
  }
}

json to_bundle_json(const Corpus& corpus) {
  return json{{"format", "cref-corpus/1"},
              {"problems", corpus.problems()},
              {"submissions", corpus.submissions()}};
}

Corpus from_bundle_json(const json& bundle) {
  std::vector<Problem> problems;
  std::vector<Submission> submissions;
  try {
    problems = bundle.at("problems").get<std::vector<Problem>>();
    submissions = bundle.at("submissions").get<std::vector<Submission>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorpus, fmt::format("corpus bundle: {}", e.what()));
  }
  for (const auto& p : problems) check_problem(p, fs::path("corpus.json") / p.id);
  return assemble(std::move(problems), std::move(submissions), "corpus.json");
}

void export_bundle(const Corpus& corpus, const fs::path& file) {
  write_file(file, to_bundle_json(corpus).dump(2) + "\n");
}

Corpus filter(const Corpus& corpus, const CorpusFilter& selection) {
  std::vector<Problem> problems;
  for (const auto& p : corpus.problems()) {
    if (selection.tiers && !selection.tiers->contains(p.tier)) continue;
    if (selection.problem_ids && !selection.problem_ids->contains(p.id)) continue;
    problems.push_back(p);
  }
  std::vector<Submission> submissions;
  for (const auto& s : corpus.submissions()) {
    const bool keep = std::any_of(problems.begin(), problems.end(),
                                  [&](const Problem& p) { return p.id == s.problem_id; });
    if (keep) submissions.push_back(s);
  }
  Corpus out(std::move(problems), std::move(submissions));
  for (const auto& w : corpus.warnings()) out.add_warning(w);
  if (out.submissions().empty()) out.add_warning("filter selected no submissions");
  return out;
}

CorpusStats compute_stats(const Corpus& corpus) {
  CorpusStats stats;
  stats.problems = corpus.problems().size();
  stats.submissions = corpus.submissions().size();
  std::size_t tests = 0;
  for (const auto& p : corpus.problems()) tests += p.test_cases.size();
  if (stats.problems > 0) {
    stats.mean_tests_per_problem = static_cast<double>(tests) / static_cast<double>(stats.problems);
  }
  std::size_t words = 0;
  for (const auto& s : corpus.submissions()) {
    std::istringstream in(s.tutor_guidance);
    std::string word;
    while (in >> word) ++words;
    stats.submissions_per_tier[corpus.problem_of(s).tier] += 1;
  }
  if (stats.submissions > 0) {
    stats.mean_guidance_words = static_cast<double>(words) / static_cast<double>(stats.submissions);
  }
  return stats;
}

std::set<std::string> ValidationReport::flagged_ids() const {
  std::set<std::string> ids;
  for (const auto& f : failures) ids.insert(f.submission_id);
  return ids;
}

ValidationReport validate_corpus(const Corpus& corpus, Sandbox& sandbox) {
  ValidationReport report;
  for (const auto& s : corpus.submissions()) {
    const Problem& problem = corpus.problem_of(s);
    const RunReport run = sandbox.run_all(s.corrected_code, problem);
    ++report.checked;
    if (run.passed_all) continue;
    GroundTruthFailure failure;
    failure.submission_id = s.id;
    failure.problem_id = s.problem_id;
    failure.verdict = std::string(to_string(run.summary_verdict()));
    failure.failing_tests = run.failing_cases;
    failure.detail = run.compile_diagnostics;
    report.failures.push_back(std::move(failure));
  }
  return report;
}

void to_json(json& j, const TestCase& t) {
  j = json{{"index", t.index}, {"input", t.input_text}, {"expected_output", t.expected_output_text}};
}

void from_json(const json& j, TestCase& t) {
  t.index = j.at("index").get<int>();
  t.input_text = j.at("input").get<std::string>();
  t.expected_output_text = j.at("expected_output").get<std::string>();
}

void to_json(json& j, const Problem& p) {
  j = json{{"id", p.id},
           {"title", p.title},
           {"statement", p.statement},
           {"input_format", p.input_format},
           {"output_format", p.output_format},
           {"time_limit_ms", p.time_limit_ms},
           {"memory_limit_kb", p.memory_limit_kb},
           {"tier", p.tier},
           {"category", p.category},
           {"solution_description", p.solution_description},
           {"test_cases", p.test_cases}};
}

void from_json(const json& j, Problem& p) {
  p.id = j.at("id").get<std::string>();
  p.title = j.at("title").get<std::string>();
  p.statement = j.at("statement").get<std::string>();
  p.input_format = j.value("input_format", "");
  p.output_format = j.value("output_format", "");
  p.time_limit_ms = j.at("time_limit_ms").get<int>();
  p.memory_limit_kb = j.at("memory_limit_kb").get<int>();
  p.tier = j.at("tier").get<int>();
  p.category = j.value("category", "");
  p.solution_description = j.at("solution_description").get<std::string>();
  p.test_cases = j.at("test_cases").get<std::vector<TestCase>>();
}

void to_json(json& j, const Submission& s) {
  j = json{{"id", s.id},
           {"problem_id", s.problem_id},
           {"student_id", s.student_id},
           {"incorrect_code", s.incorrect_code},
           {"tutor_guidance", s.tutor_guidance},
           {"corrected_code", s.corrected_code}};
}

void from_json(const json& j, Submission& s) {
  s.id = j.at("id").get<std::string>();
  s.problem_id = j.at("problem_id").get<std::string>();
  s.student_id = j.value("student_id", "");
  s.incorrect_code = j.at("incorrect_code").get<std::string>();
  s.tutor_guidance = j.at("tutor_guidance").get<std::string>();
  s.corrected_code = j.at("corrected_code").get<std::string>();
}

void to_json(json& j, const ValidationReport& r) {
  j = json{{"checked", r.checked}, {"failures", json::array()}};
  for (const auto& f : r.failures) {
    j["failures"].push_back({{"submission_id", f.submission_id},
                             {"problem_id", f.problem_id},
                             {"verdict", f.verdict},
                             {"failing_tests", f.failing_tests},
                             {"detail", f.detail}});
  }
}

void from_json(const json& j, ValidationReport& r) {
  r.checked = j.value("checked", std::size_t{0});
  r.failures.clear();
  for (const auto& f : j.at("failures")) {
    r.failures.push_back({f.at("submission_id").get<std::string>(),
                          f.at("problem_id").get<std::string>(), f.at("verdict").get<std::string>(),
                          f.at("failing_tests").get<std::vector<int>>(),
                          f.value("detail", "")});
  }
}

}  // namespace cref
