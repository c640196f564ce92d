#include <iostream>

#include "otr/cli.hpp"

int main(int argc, char** argv) { return otr::run_cli(argc, argv, std::cout, std::cerr); }
