// Runs every primary acceptance criterion and prints one PASS/FAIL line each.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "bench_support.hpp"
#include "cref/corpus.hpp"
#include "cref/harness.hpp"
#include "cref/metrics.hpp"
#include "cref/prompting.hpp"
#include "cref/sandbox.hpp"
#include "cref/strategies.hpp"
#include "cref/syntax_tree.hpp"
#include "oracles.hpp"
#include "replay_support.hpp"

using namespace cref;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back(what);
    }
  }
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// ------------------------------------------------------------- metrics --

Outcome metric_exactness() {
  Outcome out;
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  for (int m = 0; m < 20; ++m) {
    const int rows = 1 + static_cast<int>(rng() % 10);
    const int k = 1 + static_cast<int>(rng() % 5);
    const double density = static_cast<double>(rng() % 101) / 100.0;
    std::bernoulli_distribution cell(density);
    std::vector<std::vector<bool>> data(rows, std::vector<bool>(k));
    for (auto& row : data) {
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = cell(rng);
    }
    const OutcomeMatrix matrix(data);
    const oracle::Fraction top = oracle::top_k(data);
    const oracle::Fraction avg = oracle::avg_k(data);
    const Ratio t = top_k(matrix);
    const Ratio a = avg_k(matrix);
    out.require(t == Ratio{top.num, top.den}, fmt::format("matrix {} top_k {}/{} vs {}/{}", m, t.num,
                                                         t.den, top.num, top.den));
    out.require(a == Ratio{avg.num, avg.den}, fmt::format("matrix {} avg_k {}/{} vs {}/{}", m, a.num,
                                                         a.den, avg.num, avg.den));
    // top >= avg as rationals
    out.require(t.num * a.den >= a.num * t.den, fmt::format("matrix {} top_k < avg_k", m));
  }
  const double secs = seconds_since(start);
  out.require(secs < 1.0, fmt::format("took {:.3f} s", secs));
  out.notes.push_back(fmt::format("20 matrices, {:.3f} s", secs));
  return out;
}

// ----------------------------------------------------------------- ted --

Outcome ted_oracle() {
  Outcome out;
  const auto start = Clock::now();
  const oracle::EditGraph graph(6, "ab");
  std::vector<int> ids;
  for (std::size_t id = 0; id < graph.size(); ++id) {
    if (graph.is_tree(static_cast<int>(id))) ids.push_back(static_cast<int>(id));
  }
  std::vector<SyntaxTree> trees;
  for (int id : ids) trees.push_back(oracle::to_tree(graph.forest(id).front()));

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> mismatches{0};
  std::atomic<std::size_t> pairs{0};
  auto work = [&] {
    for (std::size_t i = next++; i < ids.size(); i = next++) {
      const auto dist = graph.distances_from(ids[i]);
      std::size_t bad = 0;
      for (std::size_t j = 0; j < ids.size(); ++j) {
        if (ted(trees[i], trees[j]) != dist[ids[j]]) ++bad;
      }
      mismatches += bad;
      pairs += ids.size();
    }
  };
  const unsigned n_threads = std::max(1u, std::min(8u, std::thread::hardware_concurrency()));
  std::vector<std::thread> threads;
  for (unsigned t = 1; t < n_threads; ++t) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();
  out.require(mismatches == 0, fmt::format("{} mismatching pairs", mismatches.load()));

  std::mt19937_64 rng(99);
  std::vector<SyntaxTree> random;
  for (int i = 0; i < 500; ++i) random.push_back(oracle::random_tree(rng, 10, "ab"));
  const std::size_t n = random.size();
  std::vector<std::int64_t> d(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) d[i * n + j] = ted(random[i], random[j]);
  }
  std::size_t violations = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i * n + i] != 0) ++violations;
    for (std::size_t j = 0; j < n; ++j) {
      if (d[i * n + j] != d[j * n + i]) ++violations;
      if ((d[i * n + j] == 0) != (random[i] == random[j])) ++violations;
      for (std::size_t k = 0; k < n; ++k) {
        if (d[i * n + k] > d[i * n + j] + d[j * n + k]) ++violations;
      }
    }
  }
  out.require(violations == 0, fmt::format("{} metric axiom violations", violations));
  const double secs = seconds_since(start);
  out.require(secs < 60.0, fmt::format("took {:.1f} s", secs));
  out.notes.push_back(fmt::format("{} trees, {} pairs, 500 random trees, {:.1f} s", ids.size(),
                                  pairs.load(), secs));
  return out;
}

// ---------------------------------------------------------------- rpsr --

Outcome rpsr_anchors() {
  Outcome out;
  std::vector<std::pair<std::string, std::pair<std::string, std::string>>> pairs;
  for (const Submission& s : replay_support::corpus().submissions()) {
    pairs.push_back({s.id, {s.incorrect_code, s.corrected_code}});
  }
  for (const char* name : {"bubble", "gcd", "prefix", "reverse"}) {
    const auto dir = oracle::fixture("pairs") / name;
    pairs.push_back({name, {oracle::read_file(dir / "incorrect.cpp"), oracle::read_file(dir / "corrected.cpp")}});
  }
  out.require(pairs.size() == 10, fmt::format("{} pairs", pairs.size()));
  for (const auto& [name, code] : pairs) {
    const SyntaxTree i = parse_ast(code.first);
    const SyntaxTree c = parse_ast(code.second);
    out.require(rpsr(i, c, c) == 1.0, name + ": rpsr(i,c,c) != 1");
    out.require(rpsr(i, c, i) == 0.0, name + ": rpsr(i,c,i) != 0");
  }
  // A repaired program with no behaviour, two empty structs, against a small
  // incorrect program.
  const SyntaxTree small = parse_ast("int main(){return 0;}");
  const SyntaxTree hollow = parse_ast("struct A{}; struct B{};");
  const std::int64_t expected_ted = oracle::recursive_ted(small, hollow);
  const double expected = static_cast<double>(expected_ted) / static_cast<double>(small.size());
  const double got = rps(small, hollow);
  out.require(got == expected, fmt::format("rps {} vs oracle {}", got, expected));
  out.require(got > 1.0, fmt::format("near-empty repair rps {}", got));
  // A near-null incorrect program repaired into a full one.
  const SyntaxTree null_program = parse_ast("int main(){}");
  const SyntaxTree full = parse_ast(replay_support::submission("s101").corrected_code);
  const double grown = rps(null_program, full);
  out.require(grown > 1.0, fmt::format("null-program rps {}", grown));
  out.notes.push_back(fmt::format("10 pairs, near-empty repair rps {:.3f}, null-program rps {:.3f}", got, grown));
  return out;
}

// ------------------------------------------------------------- prompts --

std::string serialize(const PromptBundle& b) {
  std::string out;
  for (std::size_t i = 0; i < b.entries.size(); ++i) {
    out += "<<< " + std::string(to_string(b.kinds[i])) + " >>>\n" + b.entries[i] + "\n";
  }
  return out;
}

Outcome prompt_goldens() {
  Outcome out;
  const Submission& s = replay_support::submission("s201");
  const Problem& p = replay_support::corpus().problem_of(s);
  InfoPayloads pl;
  pl.tutor_guidance = s.tutor_guidance;
  pl.solution_description = p.solution_description;
  RunReport failing;
  failing.failing_cases = {2};
  pl.failing_tests = failing_tests_of(p, failing);
  const auto dir = oracle::source_dir() / "goldens" / "prompts";

  std::string all;
  const std::string baseline = oracle::read_file(dir / "baseline.txt");
  out.require(render_baseline(p, s.incorrect_code) == baseline, "baseline.txt differs");
  all += baseline;
  int checked = 1;
  for (const InfoSet& info : InfoSet::all_nonempty()) {
    std::string lower;
    for (char c : info.compact()) lower += static_cast<char>(std::tolower(c));
    const std::string name = "bundle-" + lower + ".txt";
    const std::string golden = oracle::read_file(dir / name);
    out.require(!golden.empty() && serialize(build_bundle(p, s.incorrect_code, info, pl)) == golden,
                name + " differs");
    all += golden;
    ++checked;
  }
  for (const char* phrase : {"This is a programming problem description:",
                             "This is a solution to the problem:",
                             "This incorrect code failed to pass the following test cases:"}) {
    out.require(all.find(phrase) != std::string::npos, fmt::format("phrase missing: {}", phrase));
  }
  out.notes.push_back(fmt::format("{} goldens", checked));
  return out;
}

// ------------------------------------------------------------- sandbox --

Outcome sandbox_verdicts() {
  Outcome out;
  Sandbox& sandbox = replay_support::sandbox();
  const Corpus& corpus = replay_support::corpus();
  for (const Submission& s : corpus.submissions()) {
    const RunReport r = sandbox.run_all(s.corrected_code, corpus.problem_of(s));
    bool all_accepted = !r.per_test.empty();
    for (const auto& t : r.per_test) all_accepted = all_accepted && t.verdict == Verdict::kAccepted;
    out.require(all_accepted, s.id + " ground truth not accepted");
  }
  const std::map<std::string, std::vector<int>> seeded{
      {"s101", {2}}, {"s102", {3}}, {"s201", {2}}, {"s202", {3}}, {"s301", {3}}, {"s302", {2, 3}}};
  for (const auto& [id, failing] : seeded) {
    const Submission& s = replay_support::submission(id);
    const RunReport r = sandbox.run_all(s.incorrect_code, corpus.problem_of(s));
    for (const auto& t : r.per_test) {
      const bool should_fail = std::find(failing.begin(), failing.end(), t.index) != failing.end();
      out.require(t.verdict == (should_fail ? Verdict::kWrongAnswer : Verdict::kAccepted),
                  fmt::format("{} test {} verdict {}", id, t.index, to_string(t.verdict)));
    }
  }
  Problem p;
  p.id = "loop";
  p.time_limit_ms = 500;
  p.memory_limit_kb = 65536;
  p.test_cases = {{1, "", "ok\n"}};
  const RunReport loop = sandbox.run_all("int main(){volatile unsigned long x=0;for(;;)++x;}", p);
  const auto& lt = loop.per_test.at(0);
  out.require(lt.verdict == Verdict::kTimeLimit, "busy loop not TimeLimit");
  out.require(lt.wall_time_ms >= p.time_limit_ms && lt.wall_time_ms <= p.time_limit_ms + 50,
              fmt::format("busy loop stopped after {} ms", lt.wall_time_ms));
  const RunReport ce = sandbox.run_all("int main( { return 0; }", *corpus.find_problem("p2"));
  bool all_ce = ce.per_test.size() == 3;
  for (const auto& t : ce.per_test) all_ce = all_ce && t.verdict == Verdict::kCompileError;
  out.require(all_ce, "compile error not reported on every test");
  out.notes.push_back(fmt::format("busy loop stopped at {} ms for a 500 ms limit", lt.wall_time_ms));
  return out;
}

// ----------------------------------------------------------- strategies --

Outcome strategy_semantics() {
  using replay_support::fenced;
  using replay_support::Harness;
  using replay_support::Script;
  using replay_support::submission;
  Outcome out;
  auto sessions_of = [](const AttemptRecord& a) {
    std::set<std::string> ids;
    for (const auto& s : a.stages) ids.insert(s.session_id);
    return ids.size();
  };

  // (a)
  {
    const std::string wrong = fenced(submission("s102").incorrect_code);
    Harness h(Script{}.route("", {wrong, wrong, wrong}));
    const AttemptRecord cref = h.run("s102", StrategyKind::cref());
    const AttemptRecord multi = h.run("s102", StrategyKind::multiregenerate());
    out.require(cref.stages.size() == 3 && sessions_of(cref) == 1, "(a) CREF session count");
    out.require(multi.stages.size() == 3 && sessions_of(multi) == 3, "(a) MultiRegenerate session count");
  }
  // (b)
  {
    Harness h(Script{}.route("", {fenced(submission("s101").corrected_code), "unused", "unused"}));
    for (const StrategyKind& k : {StrategyKind::cref(), StrategyKind::multiregenerate()}) {
      const AttemptRecord a = h.run("s101", k);
      out.require(a.success && a.succeeded_stage == 1 && a.stages.size() == 1,
                  "(b) stages after success for " + k.label());
    }
  }
  // (c)
  {
    const std::string partial = submission("s301").incorrect_code;
    Harness h(Script{}.route(
        "", {fenced(submission("s302").incorrect_code), fenced(partial), "No idea."}));
    const AttemptRecord a = h.run("s302", StrategyKind::cref());
    const Problem& p = replay_support::corpus().problem_of(submission("s302"));
    const RunReport oracle_report = replay_support::sandbox().run_all(partial, p);
    InfoPayloads expected;
    expected.failing_tests = failing_tests_of(p, oracle_report);
    const bool ok = a.stages.size() == 3 && oracle_report.failing_cases == std::vector<int>{3} &&
                    a.stages[2].prompt_entries ==
                        std::vector<std::string>{render_followup(InfoKind::kFailingTests, expected)};
    out.require(ok, "(c) stage-3 failing cases differ from the last extracted code");
  }
  // (d)
  {
    const Submission& s = submission("s201");
    Harness h(Script{}.route("", {fenced(s.incorrect_code), fenced(s.corrected_code)}));
    for (int run = 0; run < 3; ++run) {
      const AttemptRecord a = h.run("s201", StrategyKind::cref());
      out.require(a.success && a.succeeded_stage == 2, fmt::format("(d) run {} not stage 2", run + 1));
    }
  }
  out.notes.push_back("(a) (b) (c) (d)");
  return out;
}

// ------------------------------------------------------------ benchmark --

std::string g_uninterrupted_report;

Outcome end_to_end() {
  Outcome out;
  const auto start = Clock::now();
  oracle::TempDir tmp;
  ResultsStore store(tmp.path);
  ProviderRegistry registry = bench_support::registry();
  const Corpus corpus = ingest(oracle::fixture("corpus"));
  out.require(corpus.problems().size() == 3 && corpus.submissions().size() == 6, "fixture corpus shape");
  const RunOutcome outcome =
      run_experiment(bench_support::mini_plan("mini"), corpus, replay_support::sandbox(), registry, store);
  const double secs = seconds_since(start);
  out.require(outcome.exit_code() == 0, fmt::format("exit code {}", outcome.exit_code()));
  g_uninterrupted_report = oracle::read_file(store.run_dir("mini") / "report.md");
  const std::string expected = bench_support::expected_report();
  out.require(g_uninterrupted_report == expected, "report differs from fixtures/expected/report.md");
  out.require(expected.find("### AVG-5 by tier") != std::string::npos, "no per-tier table");
  out.require(expected.find("| / |") != std::string::npos, "no '/' RPSR cell");
  out.require(secs < 120.0, fmt::format("took {:.1f} s", secs));
  out.notes.push_back(fmt::format("{} cells, {:.1f} s", outcome.cells_total, secs));
  return out;
}

Outcome resume_idempotence() {
  Outcome out;
  oracle::TempDir tmp;
  const auto r = bench_support::kill_and_resume(tmp.path, 80);
  out.require(r.killed_status == 128 + SIGKILL, fmt::format("first run ended with {}", r.killed_status));
  out.require(r.files_at_kill > 0 && r.files_at_kill < 240,
              fmt::format("{} attempts stored at kill", r.files_at_kill));
  out.require(r.resume_status == 0, fmt::format("resume exited {}", r.resume_status));
  const std::string resumed = oracle::read_file(tmp.path / "mini" / "report.md");
  out.require(!g_uninterrupted_report.empty() && resumed == g_uninterrupted_report,
              "resumed report differs from the uninterrupted one");
  out.notes.push_back(fmt::format("killed after {} of 240 attempts", r.files_at_kill));
  return out;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"metric exactness", metric_exactness},
      {"TED oracle equivalence", ted_oracle},
      {"RPSR anchors", rpsr_anchors},
      {"prompt goldens", prompt_goldens},
      {"sandbox verdicts", sandbox_verdicts},
      {"strategy semantics under replay", strategy_semantics},
      {"end-to-end mini-benchmark", end_to_end},
      {"resume idempotence", resume_idempotence},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.notes.push_back(std::string("exception: ") + e.what());
    }
    std::string detail;
    for (const auto& n : o.notes) detail += (detail.empty() ? "" : "; ") + n;
    std::printf("%s  %s  [%s]\n", o.pass ? "PASS" : "FAIL", name, detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
