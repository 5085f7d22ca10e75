#include <iostream>
#include <string>
#include <vector>

#include "koa/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return koa::run_cli(args, std::cout, std::cerr);
}
