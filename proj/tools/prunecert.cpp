#include <iostream>

#include "prunecert/cli.hpp"

int main(int argc, char** argv) {
  return prunecert::cli::run(argc, argv, std::cout, std::cerr);
}
