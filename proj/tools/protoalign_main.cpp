#include <iostream>
#include <string>
#include <vector>

#include "protoalign/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return protoalign::run_cli(args, std::cout, std::cerr);
}
