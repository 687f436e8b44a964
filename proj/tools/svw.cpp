#include <iostream>

#include "svw/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return svw::cli::main_entry(args, std::cout, std::cerr);
}
