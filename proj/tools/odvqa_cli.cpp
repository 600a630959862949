#include <iostream>
#include <string>
#include <vector>

#include "odvqa/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return odvqa::run_cli(args, std::cout, std::cerr);
}
