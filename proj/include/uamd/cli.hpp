#pragma once

#include <string>
#include <vector>

namespace uamd {

/// Runs the command-line tool. Exit codes: 0 success, 2 usage, 3 I/O or
/// format failure, 4 numeric failure.
int cli_run(int argc, const char* const* argv);
int cli_run(const std::vector<std::string>& args);  // without argv[0]

/// Worker cap from UAMD_THREADS (default 1).
size_t worker_count();

}  // namespace uamd
