#include <string>
#include <vector>

#include "tdcmn/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return tdcmn::cli::run(args);
}
