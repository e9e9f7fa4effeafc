#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cisper {

// Subcommands features, train, eval, ablate, sweep, stats.
// Exit codes: 0 success, 1 user or configuration error, 2 internal error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace cisper
