#include "cref/sandbox.hpp"

#include <signal.h>
#include <stdlib.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "cref/error.hpp"
#include "subprocess.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cref {

namespace {

void write_text(const fs::path& file, std::string_view content) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kHost, fmt::format("cannot write {}", file.string()));
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::string read_text(const fs::path& file, std::size_t cap, bool* truncated) {
  std::ifstream in(file, std::ios::binary);
  if (!in) return {};
  std::string data(cap + 1, '\0');
  in.read(data.data(), static_cast<std::streamsize>(cap + 1));
  data.resize(static_cast<std::size_t>(in.gcount()));
  if (data.size() > cap) {
    data.resize(cap);
    if (truncated) *truncated = true;
  }
  return data;
}

std::string substitute(std::string arg, std::string_view key, const std::string& value) {
  for (std::size_t pos = arg.find(key); pos != std::string::npos;
       pos = arg.find(key, pos + value.size())) {
    arg.replace(pos, key.size(), value);
  }
  return arg;
}

/// Lines with trailing whitespace removed, trailing blank lines dropped.
std::string trim_trailing(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) {
      line.remove_suffix(1);
    }
    lines.push_back(line);
    start = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out.push_back('\n');
    out.append(lines[i]);
  }
  return out;
}

std::vector<std::string_view> tokens(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::kAccepted: return "Accepted";
    case Verdict::kWrongAnswer: return "WrongAnswer";
    case Verdict::kTimeLimit: return "TimeLimit";
    case Verdict::kMemoryLimit: return "MemoryLimit";
    case Verdict::kRuntimeError: return "RuntimeError";
    case Verdict::kCompileError: return "CompileError";
  }
  return "?";
}

Verdict verdict_from_string(std::string_view name) {
  for (Verdict v : {Verdict::kAccepted, Verdict::kWrongAnswer, Verdict::kTimeLimit,
                    Verdict::kMemoryLimit, Verdict::kRuntimeError, Verdict::kCompileError}) {
    if (to_string(v) == name) return v;
  }
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown verdict '{}'", name));
}

ToolchainConfig ToolchainConfig::from_json(const json& j) {
  ToolchainConfig c;
  c.compile_command = j.value("compile_command", c.compile_command);
  c.compile_timeout_ms = j.value("compile_timeout_ms", c.compile_timeout_ms);
  c.env_passthrough = j.value("env_passthrough", c.env_passthrough);
  c.stdout_cap_bytes = j.value("stdout_cap_bytes", c.stdout_cap_bytes);
  c.max_processes = j.value("max_processes", c.max_processes);
  c.address_space_headroom_kb = j.value("address_space_headroom_kb", c.address_space_headroom_kb);
  return c;
}

json ToolchainConfig::to_json() const {
  return json{{"compile_command", compile_command},
              {"compile_timeout_ms", compile_timeout_ms},
              {"env_passthrough", env_passthrough},
              {"stdout_cap_bytes", stdout_cap_bytes},
              {"max_processes", max_processes},
              {"address_space_headroom_kb", address_space_headroom_kb}};
}

Artifact::~Artifact() {
  std::error_code ec;
  fs::remove_all(dir_, ec);
}

bool judge(std::string_view actual, std::string_view expected, JudgePolicy policy) {
  switch (policy.mode) {
    case JudgeMode::kExact: return actual == expected;
    case JudgeMode::kTokens: return tokens(actual) == tokens(expected);
    case JudgeMode::kTrailingWhitespace: return trim_trailing(actual) == trim_trailing(expected);
  }
  return false;
}

Verdict RunReport::summary_verdict() const {
  for (const auto& t : per_test) {
    if (t.verdict != Verdict::kAccepted) return t.verdict;
  }
  return Verdict::kAccepted;
}

Verdict classify(const ExecResult& result, const TestCase& test, Limits limits,
                 JudgePolicy policy) {
  if (result.kind == ExitKind::kTimedOut) return Verdict::kTimeLimit;
  if (result.kind == ExitKind::kSignaled && result.signal == SIGXCPU) return Verdict::kTimeLimit;
  if (result.peak_memory_kb > limits.memory_limit_kb) return Verdict::kMemoryLimit;
  if (result.kind == ExitKind::kSignaled) return Verdict::kRuntimeError;
  if (result.exit_code != 0) return Verdict::kRuntimeError;
  if (result.stdout_truncated) return Verdict::kWrongAnswer;
  return judge(result.stdout_text, test.expected_output_text, policy) ? Verdict::kAccepted
                                                                      : Verdict::kWrongAnswer;
}

Sandbox::Sandbox(ToolchainConfig config, fs::path work_root)
    : config_(std::move(config)), work_root_(std::move(work_root)) {
  if (work_root_.empty()) {
    std::string pattern = (fs::temp_directory_path() / "cref-sandbox-XXXXXX").string();
    if (!mkdtemp(pattern.data())) throw Error(ErrorCode::kHost, "cannot create sandbox directory");
    work_root_ = pattern;
    owns_work_root_ = true;
  } else {
    fs::create_directories(work_root_);
  }
  if (config_.max_processes > 0) detail::ProcessSlots::instance().set_capacity(config_.max_processes);
}

Sandbox::~Sandbox() {
  {
    std::lock_guard lock(cache_mutex_);
    cache_.clear();
  }
  if (owns_work_root_) {
    std::error_code ec;
    fs::remove_all(work_root_, ec);
  }
}

fs::path Sandbox::make_temp_dir(std::string_view prefix) {
  std::string pattern = (work_root_ / (std::string(prefix) + "-XXXXXX")).string();
  if (!mkdtemp(pattern.data())) throw Error(ErrorCode::kHost, "cannot create run directory");
  return pattern;
}

std::size_t Sandbox::compile_cache_size() const {
  std::lock_guard lock(cache_mutex_);
  return cache_.size();
}

CompileResult Sandbox::compile(std::string_view source) {
  std::promise<CompileResult> promise;
  std::shared_future<CompileResult> future;
  bool owner = false;
  {
    std::lock_guard lock(cache_mutex_);
    auto it = cache_.find(source);
    if (it != cache_.end()) {
      future = it->second;
    } else {
      future = promise.get_future().share();
      cache_.emplace(std::string(source), future);
      owner = true;
    }
  }
  if (!owner) return future.get();
  try {
    promise.set_value(compile_uncached(source));
  } catch (...) {
    // Toolchain errors are not cached: the host may be fixed between calls.
    {
      std::lock_guard lock(cache_mutex_);
      cache_.erase(cache_.find(source));
    }
    promise.set_exception(std::current_exception());
  }
  return future.get();
}

CompileResult Sandbox::compile_uncached(std::string_view source) {
  CompileResult result;
  if (source.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    result.diagnostics = "empty source";
    return result;
  }
  const fs::path dir = make_temp_dir("build");
  const fs::path src = dir / "main.cpp";
  const fs::path out = dir / "prog";
  const fs::path log = dir / "compile.log";
  write_text(src, source);

  detail::SpawnRequest request;
  for (const auto& arg : config_.compile_command) {
    request.argv.push_back(substitute(substitute(arg, "{source}", src.string()), "{output}",
                                      out.string()));
  }
  request.env = detail::passthrough_env(config_.env_passthrough);
  request.working_dir = dir;
  request.stdout_path = log;
  request.stderr_path = log;
  request.timeout_ms = config_.compile_timeout_ms;

  detail::SpawnResult spawned;
  {
    detail::SlotGuard slot;
    try {
      spawned = detail::spawn_and_wait(request);
    } catch (...) {
      std::error_code ec;
      fs::remove_all(dir, ec);
      throw;
    }
  }
  result.diagnostics = read_text(log, 1u << 20, nullptr);
  if (spawned.timed_out) {
    result.diagnostics += fmt::format("\ncompilation exceeded {} ms", config_.compile_timeout_ms);
  } else if (spawned.exited && spawned.exit_code == 0 && fs::exists(out)) {
    result.ok = true;
    result.artifact = std::make_shared<const Artifact>(dir);
    return result;
  }
  if (result.diagnostics.empty()) {
    result.diagnostics = spawned.exited
                             ? fmt::format("compiler exited with status {}", spawned.exit_code)
                             : fmt::format("compiler killed by signal {}", spawned.signal);
  }
  std::error_code ec;
  fs::remove_all(dir, ec);
  return result;
}

ExecResult Sandbox::execute(const Artifact& artifact, std::string_view input, Limits limits) {
  const fs::path dir = make_temp_dir("run");
  const fs::path in = dir / "input.txt";
  const fs::path out = dir / "output.txt";
  write_text(in, input);

  detail::SpawnRequest request;
  request.argv = {artifact.executable().string()};
  request.env = detail::passthrough_env({"LANG", "LC_ALL"});
  request.working_dir = dir;
  request.stdin_path = in;
  request.stdout_path = out;
  request.timeout_ms = limits.time_limit_ms;
  const std::uint64_t memory_bytes = static_cast<std::uint64_t>(limits.memory_limit_kb) * 1024u;
  request.address_space_bytes = memory_bytes + config_.address_space_headroom_kb * 1024u;
  request.stack_bytes = memory_bytes;
  request.cpu_seconds = static_cast<std::uint64_t>(limits.time_limit_ms / 1000 + 2);
  request.file_size_bytes = config_.stdout_cap_bytes + 1;

  detail::SpawnResult spawned;
  {
    detail::SlotGuard slot;
    try {
      spawned = detail::spawn_and_wait(request);
    } catch (const Error& e) {
      std::error_code ec;
      fs::remove_all(dir, ec);
      throw Error(ErrorCode::kHost, e.what());
    }
  }

  ExecResult result;
  result.stdout_text = read_text(out, config_.stdout_cap_bytes, &result.stdout_truncated);
  result.wall_time_ms = spawned.wall_time_ms;
  result.peak_memory_kb = spawned.peak_memory_kb;
  if (spawned.timed_out) {
    result.kind = ExitKind::kTimedOut;
  } else if (spawned.exited) {
    result.kind = ExitKind::kExited;
    result.exit_code = spawned.exit_code;
  } else {
    result.kind = ExitKind::kSignaled;
    result.signal = spawned.signal;
  }
  std::error_code ec;
  fs::remove_all(dir, ec);
  return result;
}

RunReport Sandbox::run_all(std::string_view source, const Problem& problem, JudgePolicy policy) {
  RunReport report;
  const CompileResult compiled = compile(source);
  if (!compiled.ok) {
    report.compile_diagnostics = compiled.diagnostics;
    for (const auto& t : problem.test_cases) {
      report.per_test.push_back({t.index, Verdict::kCompileError, 0, 0});
      report.failing_cases.push_back(t.index);
    }
    report.passed_all = false;
    return report;
  }
  const Limits limits{problem.time_limit_ms, problem.memory_limit_kb};
  for (const auto& t : problem.test_cases) {
    const ExecResult exec = execute(*compiled.artifact, t.input_text, limits);
    const Verdict verdict = classify(exec, t, limits, policy);
    report.per_test.push_back({t.index, verdict, exec.wall_time_ms, exec.peak_memory_kb});
    if (verdict != Verdict::kAccepted) report.failing_cases.push_back(t.index);
  }
  report.passed_all = report.failing_cases.empty() && !report.per_test.empty();
  return report;
}

void to_json(json& j, const RunReport& r) {
  j = json{{"passed_all", r.passed_all}, {"failing_cases", r.failing_cases}, {"per_test", json::array()}};
  for (const auto& t : r.per_test) {
    j["per_test"].push_back({{"index", t.index},
                             {"verdict", to_string(t.verdict)},
                             {"wall_time_ms", t.wall_time_ms},
                             {"peak_memory_kb", t.peak_memory_kb}});
  }
  if (!r.compile_diagnostics.empty()) j["compile_diagnostics"] = r.compile_diagnostics;
}

void from_json(const json& j, RunReport& r) {
  r.passed_all = j.at("passed_all").get<bool>();
  r.failing_cases = j.at("failing_cases").get<std::vector<int>>();
  r.per_test.clear();
  for (const auto& t : j.at("per_test")) {
    r.per_test.push_back({t.at("index").get<int>(),
                          verdict_from_string(t.at("verdict").get<std::string>()),
                          t.value("wall_time_ms", std::int64_t{0}),
                          t.value("peak_memory_kb", std::int64_t{0})});
  }
  r.compile_diagnostics = j.value("compile_diagnostics", "");
}

}  // namespace cref
