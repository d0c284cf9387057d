#pragma once

#include <string>
#include <vector>

namespace caries::cli {

/// Runs one command line (argv[0] is the program name). Returns the process
/// exit code; usage errors return 2, runtime failures 1.
int run(const std::vector<std::string>& argv);

}  // namespace caries::cli
