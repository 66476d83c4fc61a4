#include <iostream>

#include "clens/cli.hpp"

int main(int argc, char** argv) { return clens::run_cli(argc, argv, std::cout, std::cerr); }
