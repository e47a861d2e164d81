#include "subprocess.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/ptrace.h>
#include <sys/resource.h>
#include <sys/time.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "cref/error.hpp"

extern char** environ;

namespace cref::detail {

namespace {

struct CStringArray {
  explicit CStringArray(const std::vector<std::string>& items) {
    for (const auto& s : items) pointers.push_back(const_cast<char*>(s.c_str()));
    pointers.push_back(nullptr);
  }
  std::vector<char*> pointers;
};

void set_limit(int resource, std::uint64_t value) {
  rlimit lim{};
  lim.rlim_cur = value;
  lim.rlim_max = value;
  setrlimit(resource, &lim);
}

// Async-signal-safe only: runs between fork and exec.
[[noreturn]] void child_exec(const SpawnRequest& r, char* const* argv, char* const* envp,
                             const char* in, const char* out, const char* err, int report_fd) {
  setpgid(0, 0);
  // Lets the parent read the peak resident size at the exit stop. Without a
  // tracer the child simply runs untraced.
  ptrace(PTRACE_TRACEME, 0, nullptr, nullptr);
  signal(SIGXFSZ, SIG_IGN);
  signal(SIGPIPE, SIG_DFL);
  int fd_in = open(in, O_RDONLY);
  int fd_out = open(out, O_WRONLY | O_CREAT | O_TRUNC, 0644);
  int fd_err = (std::strcmp(out, err) == 0) ? fd_out : open(err, O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd_in < 0 || fd_out < 0 || fd_err < 0) {
    int e = errno;
    [[maybe_unused]] auto n = write(report_fd, &e, sizeof e);
    _exit(127);
  }
  dup2(fd_in, STDIN_FILENO);
  dup2(fd_out, STDOUT_FILENO);
  dup2(fd_err, STDERR_FILENO);
  if (!r.working_dir.empty() && chdir(r.working_dir.c_str()) != 0) {
    int e = errno;
    [[maybe_unused]] auto n = write(report_fd, &e, sizeof e);
    _exit(127);
  }
  set_limit(RLIMIT_CORE, 0);
  if (r.address_space_bytes) set_limit(RLIMIT_AS, *r.address_space_bytes);
  if (r.stack_bytes) set_limit(RLIMIT_STACK, *r.stack_bytes);
  if (r.cpu_seconds) set_limit(RLIMIT_CPU, *r.cpu_seconds);
  if (r.file_size_bytes) set_limit(RLIMIT_FSIZE, *r.file_size_bytes);
  if (std::strchr(argv[0], '/') != nullptr) {
    execve(argv[0], argv, envp);
  } else {
    execvpe(argv[0], argv, envp);
  }
  int e = errno;
  [[maybe_unused]] auto n = write(report_fd, &e, sizeof e);
  _exit(127);
}

// Resident set of this process in KB; a forked child starts out at this size.
std::int64_t self_rss_kb() {
  long pages_total = 0;
  long pages_resident = 0;
  FILE* f = std::fopen("/proc/self/statm", "r");
  if (!f) return 0;
  const int n = std::fscanf(f, "%ld %ld", &pages_total, &pages_resident);
  std::fclose(f);
  if (n != 2) return 0;
  return pages_resident * (sysconf(_SC_PAGESIZE) / 1024);
}

std::int64_t vm_hwm_kb(pid_t pid) {
  char path[64];
  std::snprintf(path, sizeof path, "/proc/%d/status", static_cast<int>(pid));
  FILE* f = std::fopen(path, "r");
  if (!f) return 0;
  char line[256];
  std::int64_t kb = 0;
  while (std::fgets(line, sizeof line, f)) {
    if (std::strncmp(line, "VmHWM:", 6) == 0) {
      kb = std::strtoll(line + 6, nullptr, 10);
      break;
    }
  }
  std::fclose(f);
  return kb;
}

// Slack for pages the child touches between fork and exec.
constexpr std::int64_t kPreExecSlackKb = 1024;

}  // namespace

SpawnResult spawn_and_wait(const SpawnRequest& request) {
  if (request.argv.empty()) throw Error(ErrorCode::kToolchain, "empty command");
  CStringArray argv(request.argv);
  CStringArray envp(request.env);
  const std::string in = request.stdin_path.empty() ? "/dev/null" : request.stdin_path.string();
  const std::string out = request.stdout_path.empty() ? "/dev/null" : request.stdout_path.string();
  const std::string err = request.stderr_path.empty() ? "/dev/null" : request.stderr_path.string();

  int report[2];
  if (pipe2(report, O_CLOEXEC) != 0) {
    throw Error(ErrorCode::kHost, fmt::format("pipe failed: {}", std::strerror(errno)));
  }

  // ru_maxrss also covers the forked copy of this process before exec, so it
  // only describes the child program once it exceeds that inherited size.
  const std::int64_t inherited_kb = self_rss_kb();
  const auto start = std::chrono::steady_clock::now();
  const pid_t pid = fork();
  if (pid < 0) {
    close(report[0]);
    close(report[1]);
    throw Error(ErrorCode::kHost, fmt::format("fork failed: {}", std::strerror(errno)));
  }
  if (pid == 0) {
    close(report[0]);
    child_exec(request, argv.pointers.data(), envp.pointers.data(), in.c_str(), out.c_str(),
               err.c_str(), report[1]);
  }
  close(report[1]);

  SpawnResult result;
  int status = 0;
  rusage usage{};
  bool exec_seen = false;
  bool traced = false;
  bool exit_sampled = false;
  std::int64_t sampled_kb = 0;
  bool killed = false;

  // Handles a ptrace stop; the child keeps running afterwards.
  auto resume_stopped = [&](int st) {
    const int sig = WSTOPSIG(st);
    const int event = st >> 16;
    int deliver = 0;
    if (sig == SIGTRAP && event == PTRACE_EVENT_EXIT) {
      sampled_kb = std::max(sampled_kb, vm_hwm_kb(pid));
      exit_sampled = true;
    } else if (sig == SIGTRAP && !traced) {
      // first stop: right after the initial exec
      traced = true;
      exec_seen = true;
      ptrace(PTRACE_SETOPTIONS, pid, nullptr,
             reinterpret_cast<void*>(static_cast<long>(PTRACE_O_TRACEEXIT | PTRACE_O_TRACEEXEC |
                                                       PTRACE_O_EXITKILL)));
    } else if (!(sig == SIGTRAP && event != 0)) {
      deliver = sig;
    }
    ptrace(PTRACE_CONT, pid, nullptr, reinterpret_cast<void*>(static_cast<long>(deliver)));
  };

  for (;;) {
    const pid_t done = wait4(pid, &status, killed ? 0 : WNOHANG, &usage);
    if (done == pid) {
      if (WIFSTOPPED(status)) {
        resume_stopped(status);
        continue;
      }
      break;
    }
    if (done < 0) {
      if (errno == EINTR) continue;
      close(report[0]);
      throw Error(ErrorCode::kHost, fmt::format("wait4 failed: {}", std::strerror(errno)));
    }
    if (!exec_seen) {
      // The report pipe is close-on-exec: it turns readable at exec (EOF) or
      // on exec failure (errno payload).
      pollfd p{report[0], POLLIN, 0};
      exec_seen = poll(&p, 1, 0) > 0;
    }
    if (exec_seen) sampled_kb = std::max(sampled_kb, vm_hwm_kb(pid));
    const auto elapsed = std::chrono::steady_clock::now() - start;
    if (!killed && request.timeout_ms > 0 &&
        elapsed >= std::chrono::milliseconds(request.timeout_ms)) {
      kill(-pid, SIGKILL);
      kill(pid, SIGKILL);
      killed = true;
      result.timed_out = true;
      continue;
    }
    std::this_thread::sleep_for(std::chrono::microseconds(500));
  }
  result.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - start)
                            .count();
  if (exit_sampled) {
    result.peak_memory_kb = sampled_kb;
  } else {
    const std::int64_t maxrss = usage.ru_maxrss;
    result.peak_memory_kb = maxrss > inherited_kb + kPreExecSlackKb ? maxrss : sampled_kb;
  }

  int exec_errno = 0;
  const ssize_t got = read(report[0], &exec_errno, sizeof exec_errno);
  close(report[0]);
  if (got == static_cast<ssize_t>(sizeof exec_errno)) {
    throw Error(ErrorCode::kToolchain, fmt::format("cannot execute '{}': {}", request.argv[0],
                                                   std::strerror(exec_errno)));
  }

  if (WIFEXITED(status)) {
    result.exited = true;
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.signal = WTERMSIG(status);
  }
  return result;
}

std::vector<std::string> passthrough_env(const std::vector<std::string>& names) {
  std::vector<std::string> env;
  for (const auto& name : names) {
    if (const char* value = std::getenv(name.c_str())) env.push_back(name + "=" + value);
  }
  return env;
}

struct ProcessSlots::State {
  std::mutex mutex;
  std::condition_variable cv;
  unsigned capacity = 1;
  unsigned in_use = 0;
};

ProcessSlots::ProcessSlots() : state_(new State) {
  state_->capacity = std::max(1u, std::thread::hardware_concurrency());
}

ProcessSlots& ProcessSlots::instance() {
  static ProcessSlots slots;
  return slots;
}

void ProcessSlots::set_capacity(unsigned capacity) {
  std::lock_guard lock(state_->mutex);
  state_->capacity = std::max(1u, capacity);
  state_->cv.notify_all();
}

void ProcessSlots::acquire() {
  std::unique_lock lock(state_->mutex);
  state_->cv.wait(lock, [&] { return state_->in_use < state_->capacity; });
  ++state_->in_use;
}

void ProcessSlots::release() {
  std::lock_guard lock(state_->mutex);
  --state_->in_use;
  state_->cv.notify_one();
}

}  // namespace cref::detail
