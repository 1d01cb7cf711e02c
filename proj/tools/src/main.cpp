#include <iostream>
#include <string>
#include <vector>

#include "ditfuse_cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return ditfuse::cli::run(args, std::cout, std::cerr);
}
