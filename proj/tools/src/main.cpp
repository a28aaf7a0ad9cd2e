#include <string>
#include <vector>

#include "deftx/cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return deftx::cli::run(args);
}
