#include <iostream>

#include "mbi/cli.hpp"

int main(int argc, char** argv) { return mbi::run_cli(argc, argv, std::cout, std::cerr); }
