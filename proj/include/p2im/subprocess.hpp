#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <sys/types.h>

namespace p2im {

/// Caps the number of child processes alive at once across all threads.
void set_spawn_limit(std::size_t limit);

std::string shell_quote(std::string_view arg);

/// Runs `command` through /bin/sh with stdio detached. Returns the exit status
/// (128 + signal number when killed by a signal). Throws
/// OracleInfrastructureError when the command cannot be spawned or exceeds
/// `timeout`; the child is killed in that case.
int run_shell(const std::string& command, std::chrono::milliseconds timeout);

/// A file under the system temp directory, removed on destruction.
class TempFile {
public:
  TempFile(std::string_view contents, std::string_view suffix);
  ~TempFile();
  TempFile(const TempFile&) = delete;
  TempFile& operator=(const TempFile&) = delete;

  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

/// A long-lived child speaking a line-oriented protocol over stdin/stdout.
class ChildProcess {
public:
  explicit ChildProcess(const std::string& command);
  ~ChildProcess();
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  /// Writes `line` plus '\n'. Throws OracleInfrastructureError if the child is gone.
  void write_line(std::string_view line);

  /// Next line without the terminator; std::nullopt on end of stream. Throws
  /// OracleInfrastructureError on timeout.
  std::optional<std::string> read_line(std::chrono::milliseconds timeout);

  /// Exit status if the child has exited, without blocking.
  std::optional<int> poll_exit();

  const std::string& command() const { return command_; }

private:
  void terminate();

  std::string command_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  std::optional<int> exit_status_;
};

} // namespace p2im
