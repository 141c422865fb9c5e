#include <iostream>

#include "scr/cli.hpp"

int main(int argc, char** argv) {
  return scr::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
