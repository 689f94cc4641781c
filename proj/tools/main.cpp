/// @file main.cpp
/// @brief Entry point of the implicitflow command-line tool. All behavior
///        lives in the library's run_cli so it can be tested in-process.

#include "implicitflow/cli.hpp"

#include <iostream>
#include <string>
#include <vector>

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv + 1, argv + argc);
    return implicitflow::run_cli(args, std::cout, std::cerr);
}
