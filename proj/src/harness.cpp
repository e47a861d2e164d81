#include "cref/harness.hpp"

#include <openssl/evp.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "cref/error.hpp"
#include "cref/sandbox.hpp"

namespace cref {

namespace fs = std::filesystem;

// ------------------------------------------------------------------- plan --

void ExperimentPlan::validate() const {
  if (run_id.empty()) throw Error(ErrorCode::kInvalidArgument, "plan needs a run_id");
  if (run_id.find('/') != std::string::npos || run_id == "." || run_id == "..") {
    throw Error(ErrorCode::kInvalidArgument, "run_id must be a single path segment");
  }
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (parallelism < 1) throw Error(ErrorCode::kInvalidArgument, "parallelism must be >= 1");
  if (strategies.empty()) throw Error(ErrorCode::kInvalidArgument, "plan has no strategies");
  if (providers.empty()) throw Error(ErrorCode::kInvalidArgument, "plan has no providers");
  params.validate();
}

nlohmann::json ExperimentPlan::to_json() const {
  nlohmann::json filter = nlohmann::json::object();
  if (corpus_filter.tiers) filter["tiers"] = *corpus_filter.tiers;
  if (corpus_filter.problem_ids) filter["problem_ids"] = *corpus_filter.problem_ids;
  return {{"run_id", run_id},
          {"corpus_filter", filter},
          {"strategies", strategies},
          {"providers", providers},
          {"k", k},
          {"params", params},
          {"parallelism", parallelism},
          {"seed", seed},
          {"rpsr_aggregation",
           rpsr_aggregation == RpsrAggregation::kFirstSuccess ? "first_success" : "all_successes"},
          {"multiregenerate_cumulative", multiregenerate_cumulative},
          {"entry_byte_cap", entry_byte_cap ? nlohmann::json(*entry_byte_cap) : nlohmann::json()}};
}

ExperimentPlan ExperimentPlan::from_json(const nlohmann::json& j) {
  ExperimentPlan p;
  p.run_id = j.at("run_id").get<std::string>();
  if (auto it = j.find("corpus_filter"); it != j.end() && it->is_object()) {
    if (it->contains("tiers")) p.corpus_filter.tiers = it->at("tiers").get<std::set<int>>();
    if (it->contains("problem_ids")) {
      p.corpus_filter.problem_ids = it->at("problem_ids").get<std::set<std::string>>();
    }
  }
  p.strategies = j.at("strategies").get<std::vector<StrategyKind>>();
  p.providers = j.at("providers").get<std::vector<std::string>>();
  p.k = j.value("k", 5);
  if (j.contains("params")) p.params = j.at("params").get<SamplingParams>();
  p.parallelism = j.value("parallelism", 1);
  p.seed = j.value("seed", std::uint64_t{0});
  const std::string agg = j.value("rpsr_aggregation", "first_success");
  if (agg == "first_success") {
    p.rpsr_aggregation = RpsrAggregation::kFirstSuccess;
  } else if (agg == "all_successes") {
    p.rpsr_aggregation = RpsrAggregation::kAllSuccesses;
  } else {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown rpsr_aggregation '{}'", agg));
  }
  p.multiregenerate_cumulative = j.value("multiregenerate_cumulative", true);
  if (j.contains("entry_byte_cap") && !j.at("entry_byte_cap").is_null()) {
    p.entry_byte_cap = j.at("entry_byte_cap").get<std::size_t>();
  }
  p.validate();
  return p;
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kHost, "sha256 failed");
  }
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

// ------------------------------------------------------------------ store --

namespace {

std::string path_segment(std::string_view id) {
  std::string out(id);
  for (char& c : out) {
    if (c == ':' || c == '/' || c == '\\') c = '_';
  }
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kStore, fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json parse_file(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kStore, fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace

ResultsStore::ResultsStore(fs::path root) : root_(std::move(root)) {}

fs::path ResultsStore::run_dir(const std::string& run_id) const { return root_ / run_id; }

bool ResultsStore::run_exists(const std::string& run_id) const {
  return fs::exists(run_dir(run_id) / "manifest.json");
}

void ResultsStore::atomic_write(const fs::path& path, const std::string& content) {
  std::lock_guard lock(write_mutex_);
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + fmt::format(".tmp{}", ::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kStore, fmt::format("cannot write {}", tmp.string()));
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::kStore, fmt::format("short write to {}", tmp.string()));
  }
  fs::rename(tmp, path);
}

void ResultsStore::write_json(const std::string& run_id, const std::string& name,
                              const nlohmann::json& j) {
  atomic_write(run_dir(run_id) / name, j.dump(2) + "\n");
}

void ResultsStore::write_text(const std::string& run_id, const std::string& name,
                              const std::string& text) {
  atomic_write(run_dir(run_id) / name, text);
}

std::optional<nlohmann::json> ResultsStore::read_json(const std::string& run_id,
                                                      const std::string& name) const {
  const fs::path path = run_dir(run_id) / name;
  if (!fs::exists(path)) return std::nullopt;
  return parse_file(path);
}

fs::path ResultsStore::attempt_path(const std::string& run_id, const std::string& provider_id,
                                    const std::string& submission_id,
                                    const StrategyKind& strategy, int trial, bool partial) const {
  return run_dir(run_id) / path_segment(provider_id) / path_segment(submission_id) /
         strategy.dir_name() / fmt::format("{}{}.json", trial, partial ? ".partial" : "");
}

void ResultsStore::save_attempt(const std::string& run_id, const AttemptRecord& attempt) {
  const fs::path final_path = attempt_path(run_id, attempt.provider_id, attempt.submission_id,
                                           attempt.strategy, attempt.trial_index);
  atomic_write(final_path, nlohmann::json(attempt).dump(2) + "\n");
  std::error_code ec;
  fs::remove(attempt_path(run_id, attempt.provider_id, attempt.submission_id, attempt.strategy,
                          attempt.trial_index, true),
             ec);
}

void ResultsStore::save_partial(const std::string& run_id, const AttemptRecord& attempt) {
  atomic_write(attempt_path(run_id, attempt.provider_id, attempt.submission_id, attempt.strategy,
                            attempt.trial_index, true),
               nlohmann::json(attempt).dump(2) + "\n");
}

std::optional<AttemptRecord> ResultsStore::load_attempt(const std::string& run_id,
                                                        const std::string& provider_id,
                                                        const std::string& submission_id,
                                                        const StrategyKind& strategy, int trial,
                                                        bool partial) const {
  const fs::path path = attempt_path(run_id, provider_id, submission_id, strategy, trial, partial);
  if (!fs::exists(path)) return std::nullopt;
  return parse_file(path).get<AttemptRecord>();
}

std::vector<AttemptRecord> ResultsStore::load_all(const std::string& run_id) const {
  std::vector<fs::path> files;
  const fs::path dir = run_dir(run_id);
  if (!fs::exists(dir)) return {};
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path& p = entry.path();
    if (p.parent_path() == dir) continue;  // run-level files
    const std::string name = p.filename().string();
    if (p.extension() != ".json" || name.find(".partial") != std::string::npos) continue;
    files.push_back(p);
  }
  std::sort(files.begin(), files.end());
  std::vector<AttemptRecord> out;
  out.reserve(files.size());
  for (const fs::path& p : files) out.push_back(parse_file(p).get<AttemptRecord>());
  return out;
}

// ------------------------------------------------------------------- run --

int RunOutcome::exit_code() const {
  if (!errors.empty() && !partial) return 1;
  if (partial) return 2;
  return 0;
}

namespace {

struct Cell {
  std::string provider_id;
  StrategyKind strategy;
  const Submission* submission;
  int trial;
};

class PartialSaver : public AttemptObserver {
 public:
  PartialSaver(ResultsStore& store, std::string run_id)
      : store_(store), run_id_(std::move(run_id)) {}
  void on_stage_finished(const AttemptRecord& attempt, const StageRecord&) override {
    store_.save_partial(run_id_, attempt);
  }

 private:
  ResultsStore& store_;
  std::string run_id_;
};

std::string plan_checksum(const ExperimentPlan& plan, const nlohmann::json& corpus_bundle) {
  nlohmann::json plan_json = plan.to_json();
  // Scheduling knobs do not change results.
  plan_json.erase("parallelism");
  plan_json.erase("seed");
  return sha256_hex(fmt::format("{}\n{}\n{}", plan_json.dump(), kTemplateVersion,
                                corpus_bundle.dump()));
}

}  // namespace

RunOutcome run_experiment(const ExperimentPlan& plan, const Corpus& full_corpus, Sandbox& sandbox,
                          ProviderRegistry& registry, ResultsStore& store,
                          const RunOptions& options) {
  plan.validate();
  for (const std::string& id : plan.providers) registry.get(id);
  auto log = [&](const std::string& line) {
    if (options.log) options.log(line);
  };

  const Corpus corpus = filter(full_corpus, plan.corpus_filter);
  const nlohmann::json bundle = to_bundle_json(corpus);
  const std::string checksum = plan_checksum(plan, bundle);

  if (store.run_exists(plan.run_id)) {
    if (!options.resume) {
      throw Error(ErrorCode::kStore,
                  fmt::format("run '{}' already exists; pass --resume to continue it", plan.run_id));
    }
    const nlohmann::json manifest = *store.read_json(plan.run_id, "manifest.json");
    if (manifest.value("checksum", "") != checksum) {
      throw Error(ErrorCode::kStore,
                  fmt::format("run '{}' was started with a different plan or corpus", plan.run_id));
    }
  } else {
    store.write_json(plan.run_id, "corpus.json", bundle);
    store.write_json(plan.run_id, "manifest.json",
                     {{"run_id", plan.run_id},
                      {"plan", plan.to_json()},
                      {"template_version", kTemplateVersion},
                      {"checksum", checksum}});
  }

  if (!store.read_json(plan.run_id, "validation.json")) {
    log("validating ground truths");
    store.write_json(plan.run_id, "validation.json", validate_corpus(corpus, sandbox));
  }

  std::vector<Cell> cells;
  for (const std::string& provider : plan.providers) {
    for (const StrategyKind& strategy : plan.strategies) {
      for (const Submission& sub : corpus.submissions()) {
        for (int t = 1; t <= plan.k; ++t) cells.push_back({provider, strategy, &sub, t});
      }
    }
  }
  RunOutcome outcome;
  outcome.cells_total = cells.size();
  std::vector<Cell> pending;
  for (const Cell& c : cells) {
    if (fs::exists(store.attempt_path(plan.run_id, c.provider_id, c.submission->id, c.strategy,
                                      c.trial))) {
      ++outcome.cells_already_done;
    } else {
      pending.push_back(c);
    }
  }
  std::shuffle(pending.begin(), pending.end(), std::mt19937_64(plan.seed));
  log(fmt::format("{} cells, {} already stored, {} to run", cells.size(),
                  outcome.cells_already_done, pending.size()));

  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  bool hard_error = false;
  std::mutex outcome_mutex;
  PartialSaver saver(store, plan.run_id);

  auto worker = [&] {
    while (!stop) {
      const std::size_t index = next++;
      if (index >= pending.size()) return;
      const Cell& cell = pending[index];
      StrategyContext ctx;
      ctx.sandbox = &sandbox;
      ctx.registry = &registry;
      ctx.provider_id = cell.provider_id;
      ctx.params = plan.params;
      ctx.prompt_options.entry_byte_cap = plan.entry_byte_cap;
      ctx.multiregenerate_cumulative = plan.multiregenerate_cumulative;
      ctx.observer = &saver;
      try {
        const std::optional<AttemptRecord> partial =
            store.load_attempt(plan.run_id, cell.provider_id, cell.submission->id, cell.strategy,
                               cell.trial, /*partial=*/true);
        const AttemptRecord attempt =
            run_attempt(ctx, corpus.problem_of(*cell.submission), *cell.submission,
                        cell.strategy, cell.trial, partial ? &*partial : nullptr);
        store.save_attempt(plan.run_id, attempt);
        std::lock_guard lock(outcome_mutex);
        ++outcome.cells_executed;
      } catch (const Error& e) {
        std::lock_guard lock(outcome_mutex);
        outcome.errors.push_back(fmt::format("{}/{}/{}/t{}: {}", cell.provider_id,
                                             cell.submission->id, cell.strategy.dir_name(),
                                             cell.trial, e.what()));
        if (e.code() == ErrorCode::kProviderUnavailable) {
          outcome.partial = true;
        } else {
          hard_error = true;
        }
        stop = true;
      } catch (const std::exception& e) {
        std::lock_guard lock(outcome_mutex);
        outcome.errors.push_back(fmt::format("{}/{}/{}/t{}: {}", cell.provider_id,
                                             cell.submission->id, cell.strategy.dir_name(),
                                             cell.trial, e.what()));
        hard_error = true;
        stop = true;
      }
    }
  };

  const int workers = std::min<int>(plan.parallelism, std::max<int>(1, static_cast<int>(pending.size())));
  std::vector<std::thread> threads;
  for (int i = 1; i < workers; ++i) threads.emplace_back(worker);
  worker();
  for (std::thread& t : threads) t.join();

  for (const std::string& e : outcome.errors) log("error: " + e);
  // Exhaustion is resumable by waiting; any other failure is not.
  if (hard_error) outcome.partial = false;
  if (!outcome.errors.empty()) return outcome;
  outcome.report = write_reports(store, plan.run_id);
  return outcome;
}

MetricsReport write_reports(ResultsStore& store, const std::string& run_id) {
  if (!store.run_exists(run_id)) {
    throw Error(ErrorCode::kNotFound, fmt::format("unknown run '{}'", run_id));
  }
  const nlohmann::json manifest = *store.read_json(run_id, "manifest.json");
  const Corpus corpus = from_bundle_json(*store.read_json(run_id, "corpus.json"));
  const std::vector<AttemptRecord> attempts = store.load_all(run_id);

  AggregateOptions options;
  const std::string agg = manifest.at("plan").value("rpsr_aggregation", "first_success");
  options.rpsr_aggregation =
      agg == "all_successes" ? RpsrAggregation::kAllSuccesses : RpsrAggregation::kFirstSuccess;
  if (auto validation = store.read_json(run_id, "validation.json")) {
    options.flagged_ground_truths = validation->get<ValidationReport>().flagged_ids();
  }
  MetricsReport report = aggregate(attempts, corpus, options);
  store.write_text(run_id, "report.md", report.to_markdown());
  store.write_text(run_id, "report.csv", report.to_csv());
  store.write_text(run_id, "report.json", report.to_json().dump(2) + "\n");
  const auto tokens = token_summary(attempts);
  store.write_text(run_id, "tokens.md", token_summary_markdown(tokens));
  store.write_text(run_id, "tokens.json", token_summary_json(tokens).dump(2) + "\n");
  return report;
}

// ----------------------------------------------------------------- tokens --

std::vector<TokenSummaryRow> token_summary(const std::vector<AttemptRecord>& attempts) {
  struct Acc {
    std::size_t attempts = 0;
    std::int64_t prompt = 0;
    std::int64_t completion = 0;
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> info;  // sum, count
  };
  std::map<std::pair<StrategyKind, std::string>, Acc> groups;
  for (const AttemptRecord& a : attempts) {
    Acc& acc = groups[{a.strategy, a.provider_id}];
    ++acc.attempts;
    acc.prompt += a.prompt_tokens;
    acc.completion += a.completion_tokens;
    for (const StageRecord& s : a.stages) {
      for (const auto& [kind, tokens] : s.info_tokens) {
        acc.info[kind].first += tokens;
        acc.info[kind].second += 1;
      }
    }
  }
  std::vector<TokenSummaryRow> rows;
  for (const auto& [key, acc] : groups) {
    TokenSummaryRow row;
    row.strategy = key.first;
    row.provider_id = key.second;
    row.attempts = acc.attempts;
    row.mean_prompt_tokens = static_cast<double>(acc.prompt) / static_cast<double>(acc.attempts);
    row.mean_completion_tokens =
        static_cast<double>(acc.completion) / static_cast<double>(acc.attempts);
    for (const auto& [kind, sc] : acc.info) {
      row.mean_info_tokens[kind] = static_cast<double>(sc.first) / static_cast<double>(sc.second);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string token_summary_markdown(const std::vector<TokenSummaryRow>& rows) {
  std::ostringstream out;
  out << "# Token usage\n\n"
      << "| Model | Strategy | Attempts | Prompt tokens | Completion tokens | T | S | F |\n"
      << "| --- | --- | --- | --- | --- | --- | --- | --- |\n";
  for (const TokenSummaryRow& r : rows) {
    out << fmt::format("| {} | {} | {} | {:.1f} | {:.1f} |", r.provider_id, r.strategy.label(),
                       r.attempts, r.mean_prompt_tokens, r.mean_completion_tokens);
    for (const char* kind : {"T", "S", "F"}) {
      auto it = r.mean_info_tokens.find(kind);
      out << ' ' << (it == r.mean_info_tokens.end() ? std::string("/")
                                                    : fmt::format("{:.1f}", it->second))
          << " |";
    }
    out << '\n';
  }
  return out.str();
}

nlohmann::json token_summary_json(const std::vector<TokenSummaryRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const TokenSummaryRow& r : rows) {
    out.push_back({{"model", r.provider_id},
                   {"strategy", r.strategy.label()},
                   {"attempts", r.attempts},
                   {"mean_prompt_tokens", r.mean_prompt_tokens},
                   {"mean_completion_tokens", r.mean_completion_tokens},
                   {"mean_info_tokens", r.mean_info_tokens}});
  }
  return out;
}

}  // namespace cref
