#include <iostream>

#include "noisydiff/cli.hpp"

int main(int argc, char** argv) { return noisydiff::cli::run(argc, argv, std::cout, std::cerr); }
