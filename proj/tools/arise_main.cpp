#include <csignal>
#include <iostream>

#include "arise/cli.hpp"

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  return arise::cli::run_cli(argc, argv, std::cout, std::cerr);
}
