#include <iostream>

#include "fastcall/cli.hpp"

int main(int argc, char** argv) { return fastcall::cli::run(argc, argv, std::cout, std::cerr); }
