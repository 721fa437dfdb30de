#include <string>
#include <vector>

#include "blockdiff/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return blockdiff::run_cli(args);
}
