#pragma once

#include <string>
#include <vector>

namespace lmmp::cli {

// Parses argv (without the program name) and runs one subcommand.
// Exit codes: 0 success, 1 domain failure, 2 usage error.
int dispatch(const std::vector<std::string>& args);

}  // namespace lmmp::cli
