#include "p2im/subprocess.hpp"

#include <algorithm>
#include <cerrno>
#include <condition_variable>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <fcntl.h>
#include <mutex>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>
#include <vector>

#include "p2im/errors.hpp"

extern char** environ;

namespace p2im {

namespace {

class SpawnGate {
public:
  void set_limit(std::size_t limit) {
    std::lock_guard lock(mutex_);
    limit_ = std::max<std::size_t>(limit, 1);
    cv_.notify_all();
  }
  void acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return in_use_ < limit_; });
    ++in_use_;
  }
  void release() {
    std::lock_guard lock(mutex_);
    --in_use_;
    cv_.notify_one();
  }

private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::size_t limit_ = 16;
  std::size_t in_use_ = 0;
};

SpawnGate& gate() {
  static SpawnGate g;
  return g;
}

struct GateSlot {
  GateSlot() { gate().acquire(); }
  ~GateSlot() { gate().release(); }
  GateSlot(const GateSlot&) = delete;
  GateSlot& operator=(const GateSlot&) = delete;
};

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

int decode_status(int status) {
  if (WIFEXITED(status))
    return WEXITSTATUS(status);
  if (WIFSIGNALED(status))
    return 128 + WTERMSIG(status);
  return -1;
}

// Spawns /bin/sh -c "exec <command>" with the given fds wired to stdin/stdout
// (-1 means /dev/null). stderr goes to /dev/null when `quiet`.
pid_t spawn_shell(const std::string& command, int stdin_fd, int stdout_fd, bool quiet) {
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  if (stdin_fd >= 0)
    posix_spawn_file_actions_adddup2(&actions, stdin_fd, STDIN_FILENO);
  else
    posix_spawn_file_actions_addopen(&actions, STDIN_FILENO, "/dev/null", O_RDONLY, 0);
  if (stdout_fd >= 0)
    posix_spawn_file_actions_adddup2(&actions, stdout_fd, STDOUT_FILENO);
  else
    posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
  if (quiet)
    posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, "/dev/null", O_WRONLY, 0);

  std::string script = "exec " + command;
  std::vector<char*> argv = {const_cast<char*>("/bin/sh"), const_cast<char*>("-c"),
                             script.data(), nullptr};
  pid_t pid = -1;
  int rc = posix_spawn(&pid, "/bin/sh", &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0)
    throw OracleInfrastructureError("cannot spawn '" + command + "': " + std::strerror(rc));
  return pid;
}

// Polls waitpid until the child exits or the deadline passes.
std::optional<int> wait_until(pid_t pid, std::chrono::steady_clock::time_point deadline) {
  auto nap = std::chrono::microseconds(100);
  while (true) {
    int status = 0;
    pid_t r = waitpid(pid, &status, WNOHANG);
    if (r == pid)
      return decode_status(status);
    if (r < 0 && errno != EINTR)
      return -1;
    if (std::chrono::steady_clock::now() >= deadline)
      return std::nullopt;
    std::this_thread::sleep_for(nap);
    nap = std::min<std::chrono::microseconds>(nap * 2, std::chrono::milliseconds(5));
  }
}

void kill_and_reap(pid_t pid) {
  kill(pid, SIGKILL);
  int status = 0;
  while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
}

} // namespace

void set_spawn_limit(std::size_t limit) { gate().set_limit(limit); }

std::string shell_quote(std::string_view arg) {
  std::string out = "'";
  for (char c : arg) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  out += '\'';
  return out;
}

int run_shell(const std::string& command, std::chrono::milliseconds timeout) {
  GateSlot slot;
  pid_t pid = spawn_shell(command, -1, -1, true);
  auto status = wait_until(pid, std::chrono::steady_clock::now() + timeout);
  if (!status) {
    kill_and_reap(pid);
    throw OracleInfrastructureError("command timed out after " + std::to_string(timeout.count()) +
                                    " ms: " + command);
  }
  if (*status == 127)
    throw OracleInfrastructureError("command not found (exit 127): " + command);
  return *status;
}

TempFile::TempFile(std::string_view contents, std::string_view suffix) {
  std::string pattern =
      (std::filesystem::temp_directory_path() / "p2im-XXXXXX").string() + std::string(suffix);
  int fd = mkstemps(pattern.data(), static_cast<int>(suffix.size()));
  if (fd < 0)
    throw OracleInfrastructureError("cannot create temporary file: " +
                                    std::string(std::strerror(errno)));
  path_ = pattern;
  std::size_t written = 0;
  while (written < contents.size()) {
    ssize_t n = ::write(fd, contents.data() + written, contents.size() - written);
    if (n < 0) {
      if (errno == EINTR)
        continue;
      ::close(fd);
      throw OracleInfrastructureError("cannot write temporary file " + path_.string());
    }
    written += static_cast<std::size_t>(n);
  }
  ::close(fd);
}

TempFile::~TempFile() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

ChildProcess::ChildProcess(const std::string& command) : command_(command) {
  ignore_sigpipe();
  int in_pipe[2];
  int out_pipe[2];
  if (pipe2(in_pipe, O_CLOEXEC) != 0)
    throw OracleInfrastructureError("pipe: " + std::string(std::strerror(errno)));
  if (pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw OracleInfrastructureError("pipe: " + std::string(std::strerror(errno)));
  }
  try {
    pid_ = spawn_shell(command, in_pipe[0], out_pipe[1], false);
  } catch (...) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]})
      ::close(fd);
    throw;
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
}

ChildProcess::~ChildProcess() { terminate(); }

void ChildProcess::terminate() {
  if (to_child_ >= 0) {
    ::close(to_child_);
    to_child_ = -1;
  }
  if (pid_ > 0 && !exit_status_) {
    // Give a well-behaved child a moment to exit on EOF.
    auto status = wait_until(pid_, std::chrono::steady_clock::now() + std::chrono::milliseconds(200));
    if (!status)
      kill_and_reap(pid_);
  }
  pid_ = -1;
  if (from_child_ >= 0) {
    ::close(from_child_);
    from_child_ = -1;
  }
}

void ChildProcess::write_line(std::string_view line) {
  std::string data(line);
  data += '\n';
  std::size_t written = 0;
  while (written < data.size()) {
    ssize_t n = ::write(to_child_, data.data() + written, data.size() - written);
    if (n < 0) {
      if (errno == EINTR)
        continue;
      throw OracleInfrastructureError("predictor process '" + command_ +
                                      "' is not accepting input: " + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
}

std::optional<std::string> ChildProcess::read_line(std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r')
        line.pop_back();
      return line;
    }
    auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0)
      throw OracleInfrastructureError("predictor process '" + command_ + "' timed out after " +
                                      std::to_string(timeout.count()) + " ms");
    pollfd pfd{from_child_, POLLIN, 0};
    int rc = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
    if (rc < 0) {
      if (errno == EINTR)
        continue;
      throw OracleInfrastructureError("poll: " + std::string(std::strerror(errno)));
    }
    if (rc == 0)
      continue;
    char chunk[4096];
    ssize_t n = ::read(from_child_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR)
        continue;
      throw OracleInfrastructureError("read: " + std::string(std::strerror(errno)));
    }
    if (n == 0)
      return std::nullopt;
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::optional<int> ChildProcess::poll_exit() {
  if (exit_status_ || pid_ <= 0)
    return exit_status_;
  int status = 0;
  if (waitpid(pid_, &status, WNOHANG) == pid_)
    exit_status_ = decode_status(status);
  return exit_status_;
}

} // namespace p2im
