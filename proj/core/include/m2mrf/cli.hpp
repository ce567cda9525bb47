#pragma once

namespace m2mrf {

// Entry point for the command-line tool: gen / train / eval / verify.
// Returns the process exit code: 0 success, 1 runtime or verification
// failure, 2 usage error.
int run_cli(int argc, const char* const* argv);

}  // namespace m2mrf
