#pragma once

#include <string>
#include <vector>

namespace siap::cli {

/// Runs one subcommand (simulate, fit, impute, uq, tune, ablate) and
/// returns the process exit code: 0 success, 2 config, 3 data, 4 numerical.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace siap::cli
