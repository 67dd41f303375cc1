#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>
#include <sys/wait.h>

#include "p2im/subprocess.hpp"

namespace p2im::testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(P2IM_FIXTURE_DIR) / name;
}

inline std::string python() { return P2IM_PYTHON; }

inline std::string cli_path() { return P2IM_CLI; }

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
public:
  ScratchDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "p2im-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data()))
      throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void spit(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

struct CommandResult {
  int status = -1;
  std::string output; // stdout and stderr interleaved
};

/// Runs the CLI binary with `args` (already shell-quoted where needed).
inline CommandResult run_cli_binary(const std::string& args) {
  std::string cmd = shell_quote(cli_path()) + " " + args + " 2>&1";
  CommandResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe)
    return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0)
    r.output.append(buf, n);
  int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : 128 + WTERMSIG(raw);
  return r;
}

inline std::string line_predictor_command(const std::vector<std::string>& extra) {
  std::string cmd = shell_quote(python()) + " " + shell_quote(fixture("line_predictor.py").string());
  for (const auto& a : extra)
    cmd += " " + shell_quote(a);
  return cmd;
}

} // namespace p2im::testing
