#include <iostream>
#include <string>
#include <vector>

#include "lambda_flows/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return lambda_flows::cli::run_cli(std::move(args), std::cout, std::cerr);
}
