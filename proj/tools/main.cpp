#include "suffixbench/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return suffixbench::cli::run(args);
}
