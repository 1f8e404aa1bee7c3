#include <iostream>

#include "cabin/cli.hpp"

int main(int argc, char** argv) { return cabin::cli_main(argc, argv, std::cout, std::cerr); }
