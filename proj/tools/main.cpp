#include <iostream>

#include "camp/cli/cli.hpp"

int main(int argc, char** argv) { return camp::cli::run(argc, argv, std::cout, std::cerr); }
