#include "bner/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return bner::cli_main(argc, argv, std::cout, std::cerr); }
