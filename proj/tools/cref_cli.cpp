// Command-line entry point: corpus tools, single repairs, experiment runs,
// reports and the tutor console server.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cref/console.hpp"
#include "cref/corpus.hpp"
#include "cref/error.hpp"
#include "cref/harness.hpp"
#include "cref/llm.hpp"
#include "cref/metrics.hpp"
#include "cref/prompting.hpp"
#include "cref/sandbox.hpp"
#include "cref/strategies.hpp"

namespace fs = std::filesystem;
using namespace cref;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kNotFound, fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParse, fmt::format("{}: {}", path.string(), e.what()));
  }
}

struct Common {
  std::string corpus;
  std::string toolchain;
  std::string providers_config;
  std::vector<std::string> replay_fixtures;
  bool strict_replay = false;
};

ToolchainConfig load_toolchain(const Common& c) {
  return c.toolchain.empty() ? ToolchainConfig{} : ToolchainConfig::from_json(read_json(c.toolchain));
}

ProviderRegistry load_registry(const Common& c) {
  ProviderRegistry registry = c.providers_config.empty()
                                  ? ProviderRegistry{}
                                  : ProviderRegistry::from_config_file(c.providers_config);
  for (const std::string& f : c.replay_fixtures) {
    registry.add_replay_fixture(ReplayFixture::from_json(read_json(f)), c.strict_replay);
  }
  return registry;
}

Corpus load_corpus(const Common& c) {
  if (c.corpus.empty()) throw Error(ErrorCode::kInvalidArgument, "--corpus is required");
  Corpus corpus = ingest(c.corpus);
  for (const std::string& w : corpus.warnings()) std::cerr << "warning: " << w << '\n';
  return corpus;
}

void add_common(CLI::App* app, Common& c, bool providers) {
  app->add_option("--corpus", c.corpus, "Corpus directory or corpus.json bundle");
  app->add_option("--toolchain", c.toolchain, "Toolchain config JSON");
  if (providers) {
    app->add_option("--providers", c.providers_config, "Provider config JSON");
    app->add_option("--replay-fixture", c.replay_fixtures,
                    "Replay fixture JSON, registered as replay:<id> (repeatable)");
    app->add_flag("--strict-replay", c.strict_replay, "Fail on recorded prompt-prefix drift");
  }
}

std::vector<StrategyKind> parse_strategies(const std::vector<std::string>& names,
                                           const std::string& info) {
  std::vector<StrategyKind> out;
  for (const std::string& n : names) {
    if (n == "augmented" || n == "aug") {
      if (info.empty()) throw Error(ErrorCode::kInvalidArgument, "'augmented' needs --info");
      out.push_back(StrategyKind::augmented(InfoSet::parse(info)));
    } else {
      out.push_back(StrategyKind::parse(n));
    }
  }
  return out;
}

void print_attempt(const AttemptRecord& a) {
  fmt::print("# {} {} trial {} via {}\n", a.submission_id, a.strategy.label(), a.trial_index,
             a.provider_id);
  for (const ChatSession& s : a.sessions) {
    fmt::print("\n## session {}\n", s.id);
    for (const ChatTurn& t : s.turns) {
      fmt::print("\n[{}{}]\n{}\n", to_string(t.role), t.synthetic ? ", local" : "", t.content);
    }
  }
  fmt::print("\n## stages\n");
  for (const StageRecord& st : a.stages) {
    fmt::print("stage {}: {}", st.stage_index, st.passed ? "passed" : "failed");
    if (!st.error.empty()) fmt::print(" ({})", st.error);
    if (st.run_report && !st.run_report->passed_all) {
      fmt::print(" verdict={} failing=[{}]", to_string(st.run_report->summary_verdict()),
                 fmt::join(st.run_report->failing_cases, ","));
    }
    fmt::print("\n");
  }
  fmt::print("success: {}  tokens: {} prompt / {} completion\n", a.success ? "yes" : "no",
             a.prompt_tokens, a.completion_tokens);
}

volatile std::sig_atomic_t g_stop = 0;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conversational program repair: corpus tools, experiments and tutor console"};
  app.require_subcommand(1);
  Common common;

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "Load a corpus and print statistics");
  std::string export_dir;
  std::string export_file;
  add_common(ingest_cmd, common, false);
  ingest_cmd->add_option("--export-dir", export_dir, "Write the corpus back as a directory tree");
  ingest_cmd->add_option("--export-bundle", export_file, "Write a corpus.json bundle");

  // validate-corpus
  auto* validate_cmd = app.add_subcommand("validate-corpus", "Run every ground truth against its tests");
  bool validate_json = false;
  add_common(validate_cmd, common, false);
  validate_cmd->add_flag("--json", validate_json, "Print the report as JSON");

  // judge-run
  auto* judge_cmd = app.add_subcommand("judge-run", "Judge one source file against a problem");
  std::string judge_problem;
  std::string judge_source;
  add_common(judge_cmd, common, false);
  judge_cmd->add_option("problem", judge_problem)->required();
  judge_cmd->add_option("source", judge_source)->required();

  // repair
  auto* repair_cmd = app.add_subcommand("repair", "Repair one submission and print the transcript");
  std::string repair_submission;
  std::string repair_strategy = "cref";
  std::string repair_info;
  std::string repair_provider;
  int repair_trial = 1;
  bool repair_json = false;
  add_common(repair_cmd, common, true);
  repair_cmd->add_option("--submission", repair_submission)->required();
  repair_cmd->add_option("--strategy", repair_strategy);
  repair_cmd->add_option("--info", repair_info, "Info set for 'augmented', e.g. T,S");
  repair_cmd->add_option("--provider", repair_provider)->required();
  repair_cmd->add_option("--trial", repair_trial);
  repair_cmd->add_flag("--json", repair_json, "Print the attempt record as JSON");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Run an experiment plan");
  std::string plan_file;
  std::vector<std::string> eval_strategies;
  std::string eval_info;
  std::vector<std::string> eval_providers;
  int eval_k = 5;
  int eval_jobs = 1;
  std::string eval_run_id;
  bool eval_resume = false;
  std::string results_dir = "results";
  std::uint64_t eval_seed = 0;
  std::vector<int> eval_tiers;
  add_common(eval_cmd, common, true);
  eval_cmd->add_option("--plan", plan_file, "Plan JSON; only --run-id and --jobs still apply");
  eval_cmd->add_option("--strategies", eval_strategies, "baseline, aug-<tsf>, augmented, multiregen, cref")
      ->delimiter(',');
  eval_cmd->add_option("--info", eval_info, "Info set for 'augmented'");
  eval_cmd->add_option("--provider", eval_providers, "Provider ids to evaluate")->delimiter(',');
  eval_cmd->add_option("--k", eval_k, "Trials per cell")->capture_default_str();
  eval_cmd->add_option("--jobs", eval_jobs, "Cells run in parallel")->capture_default_str();
  eval_cmd->add_option("--run-id", eval_run_id, "Run directory name (default: run)");
  eval_cmd->add_flag("--resume", eval_resume, "Continue an existing run with the same plan");
  eval_cmd->add_option("--results", results_dir, "Results root")->capture_default_str();
  eval_cmd->add_option("--seed", eval_seed, "Shuffles cell scheduling only");
  eval_cmd->add_option("--tiers", eval_tiers, "Restrict the corpus to these tiers")->delimiter(',');

  // report / tokens
  auto* report_cmd = app.add_subcommand("report", "Recompute and print a run's report");
  std::string report_run;
  std::string report_format = "markdown";
  report_cmd->add_option("--run-id", report_run)->required();
  report_cmd->add_option("--results", results_dir);
  report_cmd->add_option("--format", report_format)
      ->check(CLI::IsMember({"markdown", "csv", "json"}));

  auto* tokens_cmd = app.add_subcommand("tokens", "Mean token usage per strategy");
  std::string tokens_run;
  std::string tokens_format = "markdown";
  tokens_cmd->add_option("--run-id", tokens_run)->required();
  tokens_cmd->add_option("--results", results_dir);
  tokens_cmd->add_option("--format", tokens_format)->check(CLI::IsMember({"markdown", "json"}));

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Serve the tutor console API");
  std::string serve_host = "127.0.0.1";
  int serve_port = 8080;
  std::string serve_provider;
  std::string serve_static;
  unsigned serve_runs = 2;
  add_common(serve_cmd, common, true);
  serve_cmd->add_option("--provider", serve_provider)->required();
  serve_cmd->add_option("--host", serve_host);
  serve_cmd->add_option("--port", serve_port);
  serve_cmd->add_option("--results", results_dir);
  serve_cmd->add_option("--static-dir", serve_static, "Serve console assets from this directory");
  serve_cmd->add_option("--max-runs", serve_runs, "Concurrent CREF runs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ingest_cmd->parsed()) {
      const Corpus corpus = load_corpus(common);
      const CorpusStats stats = compute_stats(corpus);
      fmt::print("problems: {}\nsubmissions: {}\nmean tests per problem: {:.2f}\n"
                 "mean guidance words: {:.2f}\n",
                 stats.problems, stats.submissions, stats.mean_tests_per_problem,
                 stats.mean_guidance_words);
      for (const auto& [tier, n] : stats.submissions_per_tier) fmt::print("tier {}: {}\n", tier, n);
      if (!export_dir.empty()) export_directory(corpus, export_dir);
      if (!export_file.empty()) export_bundle(corpus, export_file);
      return 0;
    }

    if (validate_cmd->parsed()) {
      const Corpus corpus = load_corpus(common);
      Sandbox sandbox(load_toolchain(common));
      const ValidationReport report = validate_corpus(corpus, sandbox);
      if (validate_json) {
        std::cout << nlohmann::json(report).dump(2) << '\n';
      } else {
        fmt::print("checked {} ground truths, {} flagged\n", report.checked, report.failures.size());
        for (const GroundTruthFailure& f : report.failures) {
          fmt::print("  {} ({}): {} on tests [{}] {}\n", f.submission_id, f.problem_id, f.verdict,
                     fmt::join(f.failing_tests, ","), f.detail);
        }
      }
      return report.ok() ? 0 : 1;
    }

    if (judge_cmd->parsed()) {
      const Corpus corpus = load_corpus(common);
      const Problem* problem = corpus.find_problem(judge_problem);
      if (!problem) throw Error(ErrorCode::kNotFound, fmt::format("unknown problem '{}'", judge_problem));
      Sandbox sandbox(load_toolchain(common));
      const RunReport report = sandbox.run_all(read_text(judge_source), *problem);
      if (!report.compile_diagnostics.empty()) std::cerr << report.compile_diagnostics << '\n';
      for (const TestOutcome& t : report.per_test) {
        fmt::print("test {:>2}: {:<13} {:>6} ms {:>8} KB\n", t.index, to_string(t.verdict),
                   t.wall_time_ms, t.peak_memory_kb);
      }
      fmt::print("{}\n", report.passed_all ? "all tests passed" : "FAILED");
      return report.passed_all ? 0 : 1;
    }

    if (repair_cmd->parsed()) {
      const Corpus corpus = load_corpus(common);
      const Submission* sub = corpus.find_submission(repair_submission);
      if (!sub) {
        throw Error(ErrorCode::kNotFound, fmt::format("unknown submission '{}'", repair_submission));
      }
      Sandbox sandbox(load_toolchain(common));
      ProviderRegistry registry = load_registry(common);
      StrategyContext ctx;
      ctx.sandbox = &sandbox;
      ctx.registry = &registry;
      ctx.provider_id = repair_provider;
      const StrategyKind strategy = parse_strategies({repair_strategy}, repair_info).front();
      const AttemptRecord attempt =
          run_attempt(ctx, corpus.problem_of(*sub), *sub, strategy, repair_trial);
      if (repair_json) {
        std::cout << nlohmann::json(attempt).dump(2) << '\n';
      } else {
        print_attempt(attempt);
      }
      return 0;
    }

    if (eval_cmd->parsed()) {
      ExperimentPlan plan;
      if (!plan_file.empty()) {
        plan = ExperimentPlan::from_json(read_json(plan_file));
        if (!eval_run_id.empty()) plan.run_id = eval_run_id;
        if (eval_cmd->count("--jobs")) plan.parallelism = eval_jobs;
      } else {
        if (eval_strategies.empty()) eval_strategies = {"baseline", "tsf", "multiregen", "cref"};
        plan.run_id = eval_run_id.empty() ? "run" : eval_run_id;
        plan.strategies = parse_strategies(eval_strategies, eval_info);
        plan.providers = eval_providers;
        plan.k = eval_k;
        plan.parallelism = eval_jobs;
        plan.seed = eval_seed;
        if (!eval_tiers.empty()) plan.corpus_filter.tiers = std::set<int>(eval_tiers.begin(), eval_tiers.end());
      }
      const Corpus corpus = load_corpus(common);
      Sandbox sandbox(load_toolchain(common));
      ProviderRegistry registry = load_registry(common);
      ResultsStore store(results_dir);
      RunOptions options;
      options.resume = eval_resume;
      options.log = [](const std::string& line) { std::cerr << line << '\n'; };
      const RunOutcome outcome = run_experiment(plan, corpus, sandbox, registry, store, options);
      if (outcome.report) {
        std::cout << outcome.report->to_markdown();
      } else if (outcome.partial) {
        std::cerr << fmt::format("run '{}' is partial; rerun with --resume to continue\n", plan.run_id);
      }
      return outcome.exit_code();
    }

    if (report_cmd->parsed()) {
      ResultsStore store(results_dir);
      const MetricsReport report = write_reports(store, report_run);
      if (report_format == "markdown") std::cout << report.to_markdown();
      if (report_format == "csv") std::cout << report.to_csv();
      if (report_format == "json") std::cout << report.to_json().dump(2) << '\n';
      return 0;
    }

    if (tokens_cmd->parsed()) {
      ResultsStore store(results_dir);
      if (!store.run_exists(tokens_run)) {
        throw Error(ErrorCode::kNotFound, fmt::format("unknown run '{}'", tokens_run));
      }
      const auto attempts = store.load_all(tokens_run);
      if (attempts.empty()) throw Error(ErrorCode::kInvalidArgument, "no attempts");
      const auto rows = token_summary(attempts);
      if (tokens_format == "markdown") std::cout << token_summary_markdown(rows);
      if (tokens_format == "json") std::cout << token_summary_json(rows).dump(2) << '\n';
      return 0;
    }

    if (serve_cmd->parsed()) {
      Corpus corpus = load_corpus(common);
      Sandbox sandbox(load_toolchain(common));
      ProviderRegistry registry = load_registry(common);
      ConsoleConfig config;
      config.provider_id = serve_provider;
      config.store_root = results_dir;
      config.max_concurrent_runs = serve_runs;
      ConsoleService service(std::move(corpus), sandbox, registry, config);
      ConsoleServer server(service, serve_static);
      const int port = server.bind(serve_host, serve_port);
      if (port < 0) throw Error(ErrorCode::kHost, fmt::format("cannot bind {}:{}", serve_host, serve_port));
      std::cerr << fmt::format("listening on http://{}:{}\n", serve_host, port);
      static ConsoleServer* active = &server;
      std::signal(SIGINT, [](int) {
        g_stop = 1;
        active->stop();
      });
      std::signal(SIGTERM, [](int) {
        g_stop = 1;
        active->stop();
      });
      server.serve();
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
