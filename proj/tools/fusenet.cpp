#include <iostream>

#include "fusenet/cli.hpp"

int main(int argc, char** argv) { return fusenet::cli::main(argc, argv, std::cout, std::cerr); }
