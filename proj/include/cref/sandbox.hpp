#pragma once

#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cref/corpus.hpp"

namespace cref {

enum class Verdict {
  kAccepted,
  kWrongAnswer,
  kTimeLimit,
  kMemoryLimit,
  kRuntimeError,
  kCompileError,
};

std::string_view to_string(Verdict v);
Verdict verdict_from_string(std::string_view name);

/// Compiler invocation. `{source}` and `{output}` in any argument are
/// substituted with the per-compile paths.
struct ToolchainConfig {
  std::vector<std::string> compile_command{"g++",  "-std=c++17", "-O2", "-pipe",
                                           "-o",   "{output}",   "{source}"};
  int compile_timeout_ms = 60000;
  std::vector<std::string> env_passthrough{"PATH", "HOME", "TMPDIR", "LANG", "LC_ALL"};
  std::size_t stdout_cap_bytes = 8u << 20;
  /// Upper bound on concurrently running child processes; 0 = hardware threads.
  unsigned max_processes = 0;
  /// Extra address space granted on top of the memory limit before the
  /// kernel starts refusing allocations.
  std::size_t address_space_headroom_kb = 256u * 1024u;

  static ToolchainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct Limits {
  int time_limit_ms = 1000;
  int memory_limit_kb = 65536;
};

/// An executable produced by compile(); the file is removed when the last
/// handle goes away.
class Artifact {
 public:
  explicit Artifact(std::filesystem::path dir) : dir_(std::move(dir)) {}
  ~Artifact();
  Artifact(const Artifact&) = delete;
  Artifact& operator=(const Artifact&) = delete;

  std::filesystem::path executable() const { return dir_ / "prog"; }

 private:
  std::filesystem::path dir_;
};

struct CompileResult {
  bool ok = false;
  std::string diagnostics;
  std::shared_ptr<const Artifact> artifact;  // set iff ok
};

enum class ExitKind { kExited, kSignaled, kTimedOut };

struct ExecResult {
  std::string stdout_text;
  bool stdout_truncated = false;
  ExitKind kind = ExitKind::kExited;
  int exit_code = 0;  // valid when kind == kExited
  int signal = 0;     // valid when kind == kSignaled
  std::int64_t wall_time_ms = 0;
  std::int64_t peak_memory_kb = 0;
};

enum class JudgeMode { kTrailingWhitespace, kExact, kTokens };

struct JudgePolicy {
  JudgeMode mode = JudgeMode::kTrailingWhitespace;
};

/// Default policy strips trailing whitespace per line and trailing blank
/// lines before a byte-wise compare.
bool judge(std::string_view actual, std::string_view expected, JudgePolicy policy = {});

struct TestOutcome {
  int index = 0;
  Verdict verdict = Verdict::kAccepted;
  std::int64_t wall_time_ms = 0;
  std::int64_t peak_memory_kb = 0;
};

struct RunReport {
  std::vector<TestOutcome> per_test;
  bool passed_all = false;
  std::vector<int> failing_cases;  // test indices, ascending
  std::string compile_diagnostics;

  /// First non-Accepted verdict, or Accepted when everything passed.
  Verdict summary_verdict() const;
};

/// Compiles and runs C++ programs under limits. Each compile and each run
/// happens in its own temporary directory. Compiles are memoised on the
/// exact source text, which also makes compile() deterministic per instance.
class Sandbox {
 public:
  explicit Sandbox(ToolchainConfig config = {}, std::filesystem::path work_root = {});
  ~Sandbox();
  Sandbox(const Sandbox&) = delete;
  Sandbox& operator=(const Sandbox&) = delete;

  const ToolchainConfig& config() const { return config_; }

  /// Throws Error(kToolchain) when the compiler cannot be launched.
  CompileResult compile(std::string_view source);

  /// Throws Error(kHost) on spawn failure.
  ExecResult execute(const Artifact& artifact, std::string_view input, Limits limits);

  RunReport run_all(std::string_view source, const Problem& problem,
                    JudgePolicy policy = {});

  std::size_t compile_cache_size() const;

 private:
  std::filesystem::path make_temp_dir(std::string_view prefix);
  CompileResult compile_uncached(std::string_view source);

  ToolchainConfig config_;
  std::filesystem::path work_root_;
  bool owns_work_root_ = false;

  mutable std::mutex cache_mutex_;
  std::map<std::string, std::shared_future<CompileResult>, std::less<>> cache_;
};

Verdict classify(const ExecResult& result, const TestCase& test, Limits limits,
                 JudgePolicy policy);

void to_json(nlohmann::json& j, const RunReport& r);
void from_json(const nlohmann::json& j, RunReport& r);

}  // namespace cref
