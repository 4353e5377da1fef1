#include <iostream>
#include <string>
#include <vector>

#include "volsamp/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return volsamp::run_cli(args, std::cout, std::cerr);
}
