#include <iostream>

#include "qislab/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return qislab::run_cli(args, std::cout, std::cerr, std::cin);
}
