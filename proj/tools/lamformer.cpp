#include <iostream>

#include "lamformer/cli.hpp"

int main(int argc, char** argv) { return lamformer::run_cli(argc, argv, std::cout, std::cerr); }
