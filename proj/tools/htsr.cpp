#include <iostream>
#include <string>
#include <vector>

#include "htsr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return htsr::cli::run(args, std::cout, std::cerr);
}
