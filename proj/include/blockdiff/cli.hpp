#pragma once

#include <string>
#include <vector>

namespace blockdiff {

// Entry point shared by tools/main.cpp and the test suites; returns the
// process exit code. On failure a machine-readable error record is printed
// to stderr and the code is nonzero.
int run_cli(const std::vector<std::string>& args);

}  // namespace blockdiff
