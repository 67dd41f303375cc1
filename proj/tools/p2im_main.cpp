#include <iostream>

#include "p2im/cli.hpp"

int main(int argc, char** argv) { return p2im::run_cli(argc, argv, std::cout, std::cerr); }
