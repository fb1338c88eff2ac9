#include <iostream>

#include "prefchain/cli.hpp"

int main(int argc, char** argv) { return prefchain::run_cli(argc, argv, std::cout, std::cerr); }
