#include <iostream>

#include "simba/cli.hpp"

int main(int argc, char** argv) {
  return simba::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
