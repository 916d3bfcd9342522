#include <iostream>
#include <string>
#include <vector>

#include "metasets/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return metasets::cli::run(args, std::cout, std::cerr);
}
