#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cref::detail {

struct SpawnRequest {
  std::vector<std::string> argv;  // argv[0] resolved through PATH when it has no '/'
  std::vector<std::string> env;   // "KEY=VALUE"
  std::filesystem::path working_dir;
  std::filesystem::path stdin_path;   // empty = /dev/null
  std::filesystem::path stdout_path;  // empty = /dev/null
  std::filesystem::path stderr_path;  // empty = /dev/null; may equal stdout_path
  int timeout_ms = 0;                 // wall clock, 0 = none
  std::optional<std::uint64_t> address_space_bytes;
  std::optional<std::uint64_t> stack_bytes;
  std::optional<std::uint64_t> cpu_seconds;
  std::optional<std::uint64_t> file_size_bytes;
};

struct SpawnResult {
  bool timed_out = false;
  bool exited = false;
  int exit_code = 0;
  int signal = 0;
  std::int64_t wall_time_ms = 0;
  std::int64_t peak_memory_kb = 0;
};

/// fork/exec with rlimits. Throws Error(kToolchain) if the program cannot be
/// executed (errno from execve reported) and Error(kHost) if fork fails.
SpawnResult spawn_and_wait(const SpawnRequest& request);

/// Environment entries for the named variables that are set in this process.
std::vector<std::string> passthrough_env(const std::vector<std::string>& names);

/// Bounds concurrent child processes across the whole process.
class ProcessSlots {
 public:
  static ProcessSlots& instance();
  void set_capacity(unsigned capacity);
  void acquire();
  void release();

 private:
  ProcessSlots();
  struct State;
  State* state_;
};

class SlotGuard {
 public:
  SlotGuard() { ProcessSlots::instance().acquire(); }
  ~SlotGuard() { ProcessSlots::instance().release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;
};

}  // namespace cref::detail
