#pragma once

#include <string>
#include <vector>

namespace deftx::cli {

// Entry point shared by the binary and the tests; argv without the
// program name. Returns the process exit code.
int run(const std::vector<std::string>& args);

}  // namespace deftx::cli
