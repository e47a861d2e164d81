#include <doctest.h>

#include "bench_support.hpp"
#include "cref/error.hpp"
#include "cref/harness.hpp"
#include "cref/sandbox.hpp"
#include "replay_support.hpp"

using namespace cref;
namespace fs = std::filesystem;

namespace {

int code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return static_cast<int>(e.code());
  }
  return -1;
}

std::vector<fs::path> temp_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.path().filename().string().find(".tmp") != std::string::npos) out.push_back(e.path());
  }
  return out;
}

AttemptRecord sample_attempt(int trial, bool complete) {
  AttemptRecord a;
  a.submission_id = "s101";
  a.provider_id = "replay:bench";
  a.strategy = StrategyKind::cref();
  a.trial_index = trial;
  a.complete = complete;
  StageRecord s;
  s.response = "nothing";
  s.error = "extraction_failed";
  a.stages.push_back(s);
  return a;
}

}  // namespace

TEST_CASE("sha256 matches the standard vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("plans validate and survive json") {
  ExperimentPlan plan = bench_support::mini_plan("r1");
  plan.corpus_filter.tiers = std::set<int>{1, 9};
  plan.entry_byte_cap = 4096;
  plan.rpsr_aggregation = RpsrAggregation::kAllSuccesses;
  const ExperimentPlan back = ExperimentPlan::from_json(plan.to_json());
  CHECK(back.to_json() == plan.to_json());
  for (auto mutate : std::vector<std::function<void(ExperimentPlan&)>>{
           [](ExperimentPlan& p) { p.run_id = ""; },
           [](ExperimentPlan& p) { p.run_id = "a/b"; },
           [](ExperimentPlan& p) { p.k = 0; },
           [](ExperimentPlan& p) { p.parallelism = 0; },
           [](ExperimentPlan& p) { p.strategies.clear(); },
           [](ExperimentPlan& p) { p.providers.clear(); },
           [](ExperimentPlan& p) { p.params.top_p = 0.0; }}) {
    ExperimentPlan p = bench_support::mini_plan("r1");
    mutate(p);
    CHECK(code_of([&] { p.validate(); }) == static_cast<int>(ErrorCode::kInvalidArgument));
  }
}

TEST_CASE("store layout and atomic replacement") {
  oracle::TempDir tmp;
  ResultsStore store(tmp.path);
  const fs::path final_path = store.attempt_path("r", "replay:bench", "s101", StrategyKind::cref(), 2);
  CHECK(final_path == tmp.path / "r" / "replay_bench" / "s101" / "cref" / "2.json");
  CHECK(store.attempt_path("r", "replay:bench", "s101", StrategyKind::cref(), 2, true).filename() ==
        "2.partial.json");

  store.save_partial("r", sample_attempt(2, false));
  CHECK(store.load_attempt("r", "replay:bench", "s101", StrategyKind::cref(), 2, true));
  CHECK_FALSE(store.load_attempt("r", "replay:bench", "s101", StrategyKind::cref(), 2));
  CHECK(store.load_all("r").empty());

  store.save_attempt("r", sample_attempt(2, true));
  store.save_attempt("r", sample_attempt(1, true));
  CHECK_FALSE(store.load_attempt("r", "replay:bench", "s101", StrategyKind::cref(), 2, true));
  const auto all = store.load_all("r");
  REQUIRE(all.size() == 2);
  CHECK(all[0].trial_index == 1);
  CHECK(all[1].trial_index == 2);
  CHECK(nlohmann::json(all[1]) == nlohmann::json(sample_attempt(2, true)));

  store.write_text("r", "note.txt", "first");
  store.write_text("r", "note.txt", "second");
  CHECK(oracle::read_file(store.run_dir("r") / "note.txt") == "second");
  CHECK(temp_files(tmp.path).empty());
  CHECK_FALSE(store.run_exists("r"));  // no manifest yet
}

TEST_CASE("mini benchmark reproduces the hand-derived report and refuses silent reuse") {
  oracle::TempDir tmp;
  ResultsStore store(tmp.path);
  Sandbox sandbox;
  ProviderRegistry registry = bench_support::registry();
  const Corpus corpus = ingest(oracle::fixture("corpus"));
  const ExperimentPlan plan = bench_support::mini_plan("mini");

  const RunOutcome first = run_experiment(plan, corpus, sandbox, registry, store);
  CHECK(first.exit_code() == 0);
  CHECK(first.cells_total == 240);
  CHECK(first.cells_executed == 240);
  REQUIRE(first.report);
  CHECK(first.report->to_markdown() == bench_support::expected_report());
  CHECK(oracle::read_file(store.run_dir("mini") / "report.md") == bench_support::expected_report());
  for (const char* name : {"report.csv", "report.json", "tokens.md", "tokens.json", "manifest.json",
                           "corpus.json", "validation.json"}) {
    CHECK_MESSAGE(fs::exists(store.run_dir("mini") / name), name);
  }
  CHECK(temp_files(tmp.path).empty());

  CHECK(code_of([&] { run_experiment(plan, corpus, sandbox, registry, store); }) ==
        static_cast<int>(ErrorCode::kStore));

  // Scheduling knobs may change on resume, result-relevant ones may not.
  ExperimentPlan rescheduled = plan;
  rescheduled.parallelism = 1;
  rescheduled.seed = 99;
  const RunOutcome again = run_experiment(rescheduled, corpus, sandbox, registry, store, {true, {}});
  CHECK(again.cells_executed == 0);
  CHECK(again.cells_already_done == 240);
  CHECK(oracle::read_file(store.run_dir("mini") / "report.md") == bench_support::expected_report());

  ExperimentPlan changed = plan;
  changed.k = 4;
  CHECK(code_of([&] { run_experiment(changed, corpus, sandbox, registry, store, {true, {}}); }) ==
        static_cast<int>(ErrorCode::kStore));

  const auto tokens = token_summary(store.load_all("mini"));
  CHECK(tokens.size() == 8);
  for (const auto& row : tokens) {
    CHECK(row.attempts == 30);
    CHECK(row.mean_prompt_tokens > 0);
  }
  CHECK(bench_support::count_attempt_files(store.run_dir("mini")) == 240);
}

TEST_CASE("provider exhaustion stops the run and resume completes it identically") {
  oracle::TempDir tmp;
  ResultsStore store(tmp.path);
  Sandbox sandbox;
  const Corpus corpus = ingest(oracle::fixture("corpus"));
  const ExperimentPlan plan = bench_support::mini_plan("mini", 2);

  ProviderRegistry starved = bench_support::registry();
  starved.add("replay:bench",
              std::make_shared<bench_support::BudgetProvider>(starved.get("replay:bench"), 40));
  const RunOutcome cut = run_experiment(plan, corpus, sandbox, starved, store);
  CHECK(cut.partial);
  CHECK(cut.exit_code() == 2);
  CHECK_FALSE(cut.report);
  CHECK_FALSE(fs::exists(store.run_dir("mini") / "report.md"));
  const std::size_t stored = bench_support::count_attempt_files(store.run_dir("mini"));
  CHECK(stored < 240);

  ProviderRegistry healthy = bench_support::registry();
  const RunOutcome done = run_experiment(plan, corpus, sandbox, healthy, store, {true, {}});
  CHECK(done.exit_code() == 0);
  CHECK(done.cells_already_done == stored);
  CHECK(done.cells_executed == 240 - stored);
  CHECK(oracle::read_file(store.run_dir("mini") / "report.md") == bench_support::expected_report());
}

TEST_CASE("killing the command-line run and resuming gives the same report") {
  oracle::TempDir tmp;
  const auto r = bench_support::kill_and_resume(tmp.path, 60);
  CHECK(r.killed_status == 128 + SIGKILL);
  CHECK(r.files_at_kill >= 60);
  CHECK(r.files_at_kill < 240);
  CHECK(r.resume_status == 0);
  CHECK(oracle::read_file(tmp.path / "mini" / "report.md") == bench_support::expected_report());
}

TEST_CASE("reports need a known run with attempts") {
  oracle::TempDir tmp;
  ResultsStore store(tmp.path);
  CHECK(code_of([&] { write_reports(store, "missing"); }) == static_cast<int>(ErrorCode::kNotFound));
  store.write_json("empty", "manifest.json", {{"plan", bench_support::mini_plan("empty").to_json()}});
  store.write_json("empty", "corpus.json", to_bundle_json(replay_support::corpus()));
  CHECK(code_of([&] { write_reports(store, "empty"); }) ==
        static_cast<int>(ErrorCode::kInvalidArgument));
}

TEST_CASE("token summary averages per model and strategy") {
  AttemptRecord a = sample_attempt(1, true);
  a.prompt_tokens = 10;
  a.completion_tokens = 4;
  a.stages[0].info_tokens = {{"T", 6}};
  AttemptRecord b = a;
  b.trial_index = 2;
  b.prompt_tokens = 20;
  b.stages[0].info_tokens = {{"T", 8}, {"F", 3}};
  const auto rows = token_summary({a, b});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].attempts == 2);
  CHECK(rows[0].mean_prompt_tokens == 15.0);
  CHECK(rows[0].mean_info_tokens.at("T") == 7.0);
  CHECK(rows[0].mean_info_tokens.at("F") == 3.0);
  const std::string md = token_summary_markdown(rows);
  CHECK(md.find("| replay:bench | CREF | 2 | 15.0 | 4.0 | 7.0 | / | 3.0 |") != std::string::npos);
  CHECK(token_summary_json(rows)[0]["strategy"] == "CREF");
}
