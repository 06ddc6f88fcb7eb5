#include <string>
#include <vector>

#include "csmr/app.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return csmr::app::run(args);
}
