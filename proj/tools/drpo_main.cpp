#include <iostream>
#include <string>
#include <vector>

#include "drpo/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return drpo::dispatch(args, std::cout, std::cerr);
}
