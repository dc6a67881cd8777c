#include <iostream>

#include "siflow/cli.hpp"

int main(int argc, char** argv) {
  return siflow::run_cli(argc, argv, std::cout, std::cerr);
}
