#include <iostream>

#include "datml/pipeline/pipeline.hpp"

int main(int argc, char** argv) {
  return datml::run_command(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
