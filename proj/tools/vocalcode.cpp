#include <iostream>
#include <string>
#include <vector>

#include "vocalcode/cli.hpp"

int main(int argc, char** argv) {
  return vocalcode::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
