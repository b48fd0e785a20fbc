#include <iostream>

#include "prpm/cli.hpp"

int main(int argc, char** argv) { return prpm::run_cli(argc, argv, std::cout, std::cerr); }
