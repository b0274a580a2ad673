#pragma once

// Minimal subprocess capture for driving the CLI binary from tests.

#include <array>
#include <cstdio>
#include <string>

#include <sys/wait.h>

namespace testutil {

struct ProcResult {
  int code = -1;
  std::string output;  // stdout and stderr, interleaved
};

inline ProcResult run_cmd(const std::string& cmd) {
  ProcResult r;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) {
    r.output.append(buf.data(), n);
  }
  const int status = pclose(pipe);
  if (WIFEXITED(status)) r.code = WEXITSTATUS(status);
  return r;
}

}  // namespace testutil
