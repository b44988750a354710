#include <iostream>
#include <string>
#include <vector>

#include "srp4ctr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return srp4ctr::dispatch(std::move(args), std::cout, std::cerr);
}
