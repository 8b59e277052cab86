#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) { return reslab::cli::cli_main(argc, argv, std::cout, std::cerr); }
