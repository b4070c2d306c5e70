#include <iostream>

#include "selectllm/cli.hpp"

int main(int argc, char** argv) { return selectllm::run_cli(argc, argv, std::cout, std::cerr); }
