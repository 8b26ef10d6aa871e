#include <iostream>
#include <string>
#include <vector>

#include "see/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return see::run_cli(args, std::cout, std::cerr);
}
