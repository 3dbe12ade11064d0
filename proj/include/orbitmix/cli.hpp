#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace orbitmix {

/// Subcommands simulate, fit, select-k, molien, dist, experiment. Returns 0 on success, 2 on a usage
/// error and 1 on a runtime failure. ORBITMIX_THREADS sets the OpenMP thread count.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace orbitmix
