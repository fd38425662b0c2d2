#include "app.hpp"

int main(int argc, char **argv) {
  return dkl::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
