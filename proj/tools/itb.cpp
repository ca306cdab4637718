#include <iostream>
#include <string>
#include <vector>

#include "itb/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return itb::run_cli(args, std::cout, std::cerr);
}
