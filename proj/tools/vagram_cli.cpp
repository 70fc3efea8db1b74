#include <string>
#include <vector>

#include "vagram/experiment.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return vagram::experiment::run_cli(args);
}
