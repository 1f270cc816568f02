#include <iostream>

#include "stforge/cli/commands.hpp"

int main(int argc, char** argv) { return stforge::cli::run_cli(argc, argv, std::cout, std::cerr); }
